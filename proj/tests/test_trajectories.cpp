#include "kpp_drift/trajectories.hpp"

#include <gtest/gtest.h>

using namespace kpp;

namespace {

PeriodicCell torus(int n) { return {CellKind::Torus, 1.0, 1.0, n, n}; }

FlowSpec flow(const std::string& name) {
  FlowSpec f;
  f.name = name;
  return f;
}

VectorField negated(const VectorField& q) { return {q.cell(), -q.u(), -q.v()}; }

}  // namespace

TEST(IntegrateStreamline, ZeroFlowStagnatesAtOnce) {
  const auto s = integrate_streamline(VectorField::zero(torus(16)), Vec2(0.3, 0.4), 0.01, 1.0);
  EXPECT_EQ(s.samples.size(), 1u);
  EXPECT_TRUE(s.stagnated);
  EXPECT_EQ(classify_streamline(s, torus(16), 1e-6).tag, TrajectoryTag::Stagnation);
}

TEST(IntegrateStreamline, ShearMovesAlongAStraightLine) {
  const auto q = sample_flow(flow("shear"), torus(64));
  const auto s = integrate_streamline(q, Vec2(0.0, 0.25), 0.01, 2.0);
  ASSERT_EQ(s.samples.size(), 201u);
  for (std::size_t m = 0; m < s.samples.size(); ++m) {
    EXPECT_EQ(s.samples[m].y(), 0.25);
    EXPECT_NEAR(s.samples[m].x(), 0.01 * m, 1e-12);
  }
}

TEST(IntegrateStreamline, RejectsBadArguments) {
  const auto q = sample_flow(flow("shear"), torus(16));
  EXPECT_THROW(integrate_streamline(q, Vec2(1.5, 0.2), 0.01, 1.0), InputError);
  EXPECT_THROW(integrate_streamline(q, Vec2(0.5, 0.2), 0.0, 1.0), InputError);
  EXPECT_THROW(integrate_streamline(q, Vec2(0.5, 0.2), 0.1, 0.01), InputError);
}

TEST(IntegrateStreamline, StreamFunctionDriftIsFourthOrderInTime) {
  const auto q = sample_flow(flow("cellular"), torus(128));
  auto drift = [&](double dt) {
    const auto s = integrate_streamline(q, Vec2(0.25, 0.125), dt, 2.0);
    const double p0 = std::sin(2 * kPi * 0.25) * std::sin(2 * kPi * 0.125);
    double m = 0.0;
    for (const auto& p : s.samples) m = std::max(m, std::abs(std::sin(2 * kPi * p.x()) * std::sin(2 * kPi * p.y()) - p0));
    return m;
  };
  EXPECT_GE(drift(0.02) / drift(0.01), 8.0);  // measured 30.8
}

TEST(ClassifyStreamline, ShearIsUnboundedPeriodic) {
  const auto c = torus(64);
  const auto s = integrate_streamline(sample_flow(flow("shear"), c), Vec2(0.0, 0.25), 0.01, 2.0);
  const auto r = classify_streamline(s, c, 1e-6);
  EXPECT_EQ(r.tag, TrajectoryTag::UnboundedPeriodic);
  ASSERT_TRUE(r.period_vector);
  EXPECT_EQ(*r.period_vector, Vec2(1.0, 0.0));
  ASSERT_TRUE(r.return_time);
  EXPECT_NEAR(*r.return_time, 1.0, 1e-9);
}

TEST(ClassifyStreamline, CellularOrbitCloses) {
  const auto c = torus(256);
  const auto s = integrate_streamline(sample_flow(flow("cellular"), c), Vec2(0.25, 0.125), 0.005, 5.0);
  const auto r = classify_streamline(s, c, 1e-6);
  EXPECT_EQ(r.tag, TrajectoryTag::Closed);
  EXPECT_FALSE(r.period_vector);
  EXPECT_LE(r.closest_return, 1e-6);
}

TEST(ClassifyStreamline, CellCentreIsAStagnationPoint) {
  // with grad^perp(sin 2 pi x sin 2 pi y), (1/4, 1/4) is the vortex centre
  const auto c = torus(256);
  const auto s = integrate_streamline(sample_flow(flow("cellular"), c), Vec2(0.25, 0.25), 0.005, 5.0);
  EXPECT_EQ(classify_streamline(s, c, 1e-6).tag, TrajectoryTag::Stagnation);
}

TEST(ClassifyStreamline, ClosedReturnErrorShrinksWithTheStep) {
  const auto c = torus(128);
  const auto q = sample_flow(flow("cellular"), c);
  auto err = [&](double dt) {
    return classify_streamline(integrate_streamline(q, Vec2(0.25, 0.125), dt, 5.0), c, 1e-3).closest_return;
  };
  EXPECT_GE(err(0.01) / err(0.005), 8.0);
}

TEST(ClassifyStreamline, TimeReversalNegatesThePeriod) {
  const auto c = torus(64);
  const auto q = sample_flow(flow("diagonal"), c);
  const auto fwd = classify_streamline(integrate_streamline(q, Vec2(0.3, 0.1), 0.005, 5.0), c, 1e-6);
  const auto bwd = classify_streamline(integrate_streamline(negated(q), Vec2(0.3, 0.1), 0.005, 5.0), c, 1e-6);
  ASSERT_EQ(fwd.tag, TrajectoryTag::UnboundedPeriodic);
  ASSERT_EQ(bwd.tag, TrajectoryTag::UnboundedPeriodic);
  EXPECT_EQ(*fwd.period_vector, -*bwd.period_vector);

  const auto cq = sample_flow(flow("cellular"), torus(128));
  const auto a = classify_streamline(integrate_streamline(negated(cq), Vec2(0.25, 0.125), 0.005, 5.0), torus(128), 1e-6);
  EXPECT_EQ(a.tag, TrajectoryTag::Closed);
}

TEST(ClassifyStreamline, LatticeTranslationOfTheSeed) {
  // cellular cell edges are separatrices, so use a flow with generic boundary streamlines
  const auto c = torus(128);
  const auto q = sample_flow(flow("diagonal"), c);
  const auto a = classify_streamline(integrate_streamline(q, Vec2(0.0, 0.3), 0.005, 5.0), c, 1e-6);
  const auto b = classify_streamline(integrate_streamline(q, Vec2(1.0, 0.3), 0.005, 5.0), c, 1e-6);
  ASSERT_EQ(a.tag, TrajectoryTag::UnboundedPeriodic);
  ASSERT_EQ(b.tag, a.tag);
  EXPECT_EQ(*a.period_vector, *b.period_vector);
}

TEST(ClassifyStreamline, RemarkSeedIsUnboundedNonPeriodic) {
  const auto c = torus(256);
  const auto q = sample_flow(flow("remark"), c);
  const StreamContext ctx(q);
  ClassifyParams p;
  p.stream = &ctx;
  const auto s = integrate_streamline(q, Vec2(1.0, std::exp(-1.0)), 0.005, 200.0);
  const auto r = classify_streamline(s, c, p);
  EXPECT_EQ(r.tag, TrajectoryTag::UnboundedNonPeriodic);
  EXPECT_FALSE(r.period_vector);
}

TEST(ClassifyStreamline, ShortRunsAreUndetermined) {
  const auto c = torus(64);
  const auto s = integrate_streamline(sample_flow(flow("cellular"), c), Vec2(0.25, 0.125), 0.01, 0.05);
  EXPECT_EQ(classify_streamline(s, c, 1e-6).tag, TrajectoryTag::Undetermined);
}

TEST(ClassifyStreamline, StripPeriodsAreHorizontal) {
  const PeriodicCell c(CellKind::Strip, 2.0, 1.0, 64, 64);
  const auto s = integrate_streamline(sample_flow(flow("shear"), c), Vec2(0.5, 0.25), 0.01, 5.0);
  const auto r = classify_streamline(s, c, 1e-6);
  ASSERT_EQ(r.tag, TrajectoryTag::UnboundedPeriodic);
  EXPECT_EQ(*r.period_vector, Vec2(2.0, 0.0));
}

TEST(CanonicalLatticeVector, FirstNonzeroComponentPositive) {
  EXPECT_EQ(canonical_lattice_vector(Vec2(-1, -1)), Vec2(1, 1));
  EXPECT_EQ(canonical_lattice_vector(Vec2(0, -2)), Vec2(0, 2));
  EXPECT_EQ(canonical_lattice_vector(Vec2(1, -1)), Vec2(1, -1));
}

TEST(SurveyFlow, Shear) {
  const auto q = sample_flow(flow("shear"), torus(128));
  const auto s = survey_flow(q, 16, 0.005, 5.0);
  ASSERT_TRUE(s.period_vector);
  EXPECT_EQ(*s.period_vector, Vec2(1.0, 0.0));
  EXPECT_FALSE(s.consistency_violation);
  for (const auto& r : s.seeds) {
    if (r.seed.y() == 0.0 || r.seed.y() == 0.5) EXPECT_EQ(r.classification.tag, TrajectoryTag::Stagnation);
    else EXPECT_EQ(r.classification.tag, TrajectoryTag::UnboundedPeriodic);
  }
}

TEST(SurveyFlow, CellularHasOnlyClosedOrbits) {
  const auto s = survey_flow(sample_flow(flow("cellular"), torus(128)), 16, 0.005, 20.0);
  EXPECT_FALSE(s.period_vector);
  EXPECT_EQ(s.count(TrajectoryTag::UnboundedPeriodic), 0);
  EXPECT_EQ(s.count(TrajectoryTag::UnboundedNonPeriodic), 0);
  EXPECT_GT(s.count(TrajectoryTag::Closed), 0);
}

TEST(SurveyFlow, DiagonalPeriodIsCanonical) {
  const auto s = survey_flow(sample_flow(flow("diagonal"), torus(128)), 16, 0.005, 5.0);
  ASSERT_TRUE(s.period_vector);
  EXPECT_EQ(*s.period_vector, Vec2(1.0, 1.0));
  EXPECT_FALSE(s.consistency_violation);
}

TEST(SurveyFlow, AllUndeterminedIsAnError) {
  const auto q = sample_flow(flow("cellular"), torus(64));
  EXPECT_THROW(survey_flow(q, 16, 0.01, 0.05), NumericalError);
  EXPECT_THROW(survey_flow(q, 3, 0.01, 1.0), InputError);
}
