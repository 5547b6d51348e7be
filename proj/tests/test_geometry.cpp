#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"

using namespace ufg;
using ufg::test::max_abs;

namespace {

Vec V(std::initializer_list<double> v) {
  Vec x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

BracketTable table_of(const std::string& name, int m = 0, const std::map<std::string, double>& p = {}) {
  auto e = catalog::get(name, p);
  return build_hierarchy(e.system.fields(), m ? m : e.level);
}

SDESystem ou(double k) {
  SDESystem s;
  s.variables = {"z"};
  s.drift = VectorField::parse({"-" + std::to_string(k) + "*z"}, {"z"});
  s.noise = {VectorField::parse({"1"}, {"z"})};
  return s;
}

}  // namespace

TEST(Rank, HeisenbergOrbits) {
  auto t = table_of("ufg-heisenberg");
  EXPECT_EQ(rank_at(t, Distribution::delta0, V({1, 0, 0})), 3);
  EXPECT_EQ(rank_at(t, Distribution::delta0, V({0, 1, 1})), 2);
  EXPECT_EQ(rank_at(t, Distribution::delta, V({1, 0, 0})), 2);
}

TEST(Rank, RandomCircles) {
  auto t = table_of("random-circles");
  EXPECT_EQ(rank_at(t, Distribution::delta, V({1, 0})), 1);
  EXPECT_EQ(rank_at(t, Distribution::delta0, V({1, 0})), 2);
  EXPECT_EQ(rank_at(t, Distribution::delta, V({0, 0})), 0);
  EXPECT_EQ(rank_at(t, Distribution::delta0, V({0, 0})), 0);
}

TEST(Decompose, RandomCirclesDriftIsOrthogonal) {
  auto t = table_of("random-circles");
  for (const auto& x : {V({1, 0}), V({-0.3, 1.7}), V({2, -2})}) {
    auto d = decompose_drift(t, x);
    EXPECT_LE(max_abs(d.perp - V({-x[1], x[0]})), 1e-12);
    EXPECT_LE(max_abs(d.parallel), 1e-12);
  }
}

TEST(Decompose, HeisenbergPerpIsMinusX) {
  auto t = table_of("ufg-heisenberg");
  for (const auto& x : {V({1, 0.5, -2}), V({-0.7, 1.1, 0.3})}) {
    auto d = decompose_drift(t, x);
    EXPECT_LE(max_abs(d.perp - V({-x[0], 0, 0})), 1e-12);
    EXPECT_LE(max_abs(d.parallel + d.perp - V({-x[0], -x[1], -2 * x[2]})), 1e-12);
  }
}

TEST(Decompose, DriftInsideDistributionHasNoPerp) {
  SDESystem s;
  s.drift = VectorField::parse({"sin(x)", "x*y"}, {"x", "y"});
  s.noise = {s.drift};
  auto t = build_hierarchy(s.fields(), 1);
  EXPECT_LE(max_abs(decompose_drift(t, V({0.4, 1.3})).perp), 1e-14);
}

TEST(CheckUfg, SinfieldsLevelOne) {
  auto t = table_of("sinfields", 1);
  auto r = check_ufg(t, SamplePlan::grid_box({{-3, 3}, {-3, 3}}, 32), 1);
  EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples);
  EXPECT_LE(r.max_residual, 1e-10);
  EXPECT_EQ(r.records.size(), 32u * 32u);
}

TEST(CheckUfg, LinearSystemsAtLevelTwoNMinusOne) {
  std::mt19937_64 gen(20);
  std::normal_distribution<double> g;
  for (int draw = 0; draw < 6; ++draw) {
    int n = 2 + draw % 2, d = 1 + draw % 2;
    Mat a(n, n), c(n, d);
    Vec dd(n);
    for (auto* m : {&a, &c})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(gen);
    for (int i = 0; i < n; ++i) dd[i] = g(gen);
    auto e = catalog::linear(a, dd, c);
    EXPECT_EQ(e.level, 2 * n - 1);
    auto t = build_hierarchy(e.system.fields(), e.level);
    auto r = check_ufg(t, SamplePlan::grid_box(std::vector<std::pair<double, double>>(n, {-1, 1}), 3), e.level);
    EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples) << draw;
  }
}

TEST(CheckUfg, PsiExampleIsSuspect) {
  auto e = catalog::get("non-ufg-psi");
  // The second derivative of exp(-1/x) first enters at level 4.
  auto t = build_hierarchy(e.system.fields(), 4);
  auto r = check_ufg(t, SamplePlan::grid_box({{0.01, 1}, {-1, 1}}, 16), 4);
  EXPECT_EQ(r.verdict, Verdict::suspect);
  EXPECT_GT(r.max_coefficient, 1e6);
}

TEST(CheckUfg, LevelAboveTableThrows) {
  auto t = table_of("sinfields", 1);
  EXPECT_THROW(check_ufg(t, SamplePlan::grid_box({{-1, 1}, {-1, 1}}, 2), 2), UsageError);
}

TEST(CheckHormander, RandomCirclesFailsParabolic) {
  auto t = table_of("random-circles");
  auto r = check_hormander(t, SamplePlan::grid_box({{0.5, 2}, {0.5, 2}}, 5), HormanderVariant::phc);
  EXPECT_EQ(r.verdict, Verdict::violated);
  for (const auto& rec : r.records) EXPECT_EQ(rec.rank, 1);
}

TEST(CheckHormander, GbmDependsOnOrigin) {
  auto t = table_of("gbm");
  EXPECT_EQ(check_hormander(t, SamplePlan::grid_box({{0.5, 2}}, 9), HormanderVariant::hc).verdict,
            Verdict::satisfied_on_samples);
  auto r = check_hormander(t, SamplePlan::grid_box({{-1, 1}}, 9), HormanderVariant::hc);
  EXPECT_EQ(r.verdict, Verdict::violated);
  ASSERT_TRUE(r.worst.has_value());
  EXPECT_DOUBLE_EQ(r.records[*r.worst].point[0], 0.0);
}

TEST(CheckHormander, HeisenbergParabolicRankTwo) {
  auto t = table_of("ufg-heisenberg");
  auto r = check_hormander(t, SamplePlan::grid_box({{0.5, 2}, {-1, 1}, {-1, 1}}, 4), HormanderVariant::phc);
  EXPECT_EQ(r.verdict, Verdict::violated);
  for (const auto& rec : r.records) EXPECT_EQ(rec.rank, 2);
}

TEST(CheckKalman, Examples) {
  Mat a(2, 2), q(2, 1);
  a << 0, 1, 0, 0;
  q << 0, 1;
  auto r = check_kalman(a, q);
  EXPECT_TRUE(r.satisfied);
  EXPECT_EQ(r.rank, 2);
  r = check_kalman(Mat::Zero(2, 2), Vec::Unit(2, 0));
  EXPECT_FALSE(r.satisfied);
  EXPECT_EQ(r.rank, 1);
  r = check_kalman(Mat::Random(3, 3), Mat::Identity(3, 3));
  EXPECT_TRUE(r.satisfied);
  EXPECT_THROW(check_kalman(Mat::Zero(2, 3), q), DimensionError);
}

TEST(CheckOac, CircleLineCertifiedAtOne) {
  auto e = catalog::get("circle-line");
  auto t = build_hierarchy(e.system.fields(), e.level);
  auto plan = SamplePlan::grid_box({{0.1, 2 * std::numbers::pi - 0.1}}, 200);
  auto r = check_oac(t, plan, 1.0);
  EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples);
  auto free = check_oac(t, plan, std::nullopt);
  EXPECT_NEAR(free.certified_lambda0, 1.0, 1e-6);
  EXPECT_EQ(check_oac(t, plan, 1.1).verdict, Verdict::violated);
}

TEST(CheckOac, SineOuWithKMinusOne) {
  auto e = catalog::get("sine-ou", {{"k", 2}});
  auto t = build_hierarchy(e.system.fields(), 1);
  auto r = check_oac(t, SamplePlan::grid_box({{-2, 2}, {0.1, 6}}, 12), 1.0);
  EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples);
}

TEST(CheckOac, GrushinFlipsAtZero) {
  for (double k : {-1.0, -0.1, 0.1, 1.0}) {
    auto t = table_of("grushin", 1, {{"k", k}});
    auto r = check_oac(t, SamplePlan::grid_box({{-2, 2}, {-2, 2}}, 9), std::nullopt);
    EXPECT_EQ(r.verdict, k > 0 ? Verdict::satisfied_on_samples : Verdict::violated) << k;
    EXPECT_NEAR(r.certified_lambda0, k, 1e-8);
  }
  auto t = table_of("grushin", 1, {{"k", -1}});
  EXPECT_EQ(check_oac(t, SamplePlan::grid_box({{-2, 2}, {-2, 2}}, 9), 0.5).verdict, Verdict::violated);
}

TEST(CheckOac, LinearMatchesDirectEigenvalues) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> g;
  for (int draw = 0; draw < 10; ++draw) {
    int n = 2 + draw % 3;
    Mat a(n, n), c(n, 1);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(gen);
    for (int i = 0; i < n; ++i) c(i, 0) = g(gen);
    const double lambda = 0.5 + draw * 0.1;
    auto e = catalog::linear(a, Vec::Zero(n), c);
    auto t = build_hierarchy(e.system.fields(), 1);
    auto r = check_oac(t, SamplePlan::explicit_points({Vec::Zero(n)}), lambda);
    Mat s = (a + lambda * Mat::Identity(n, n)) * c * c.transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
    EXPECT_NEAR(r.records[0].max_eigenvalue, es.eigenvalues().maxCoeff(), 1e-10);
    EXPECT_NEAR(r.records[0].min_eigenvalue, es.eigenvalues().minCoeff(), 1e-10);
  }
}

TEST(CheckOac, RejectsNonPositiveLambda) {
  auto t = table_of("circle-line");
  EXPECT_THROW(check_oac(t, SamplePlan::grid_box({{1, 2}}, 3), 0.0), UsageError);
}

TEST(CheckOac2, LinearMinusIdentity) {
  Mat a = -Mat::Identity(2, 2), c = Mat::Zero(2, 1);
  c(0, 0) = 1;
  auto e = catalog::linear(a, Vec::Zero(2), c);
  auto t = build_hierarchy(e.system.fields(), 1);
  auto plan = SamplePlan::grid_box({{-1, 1}, {-1, 1}}, 3);
  EXPECT_EQ(check_oac2(t, plan, 2.0).verdict, Verdict::satisfied_on_samples);
  EXPECT_EQ(check_oac2(t, plan, 1.0).verdict, Verdict::satisfied_on_samples);
}

TEST(CheckOac2, CircleLineReportsCertifiedLambda) {
  auto t = table_of("circle-line", 3);
  auto r = check_oac2(t, SamplePlan::grid_box({{0.2, 2 * std::numbers::pi - 0.2}}, 200), std::nullopt);
  EXPECT_EQ(r.records.size(), 200u);
  EXPECT_TRUE(std::isfinite(r.certified_lambda0));
}

TEST(CheckLyapunov, OrnsteinUhlenbeckQuadratic) {
  for (double k : {1.0, 3.0}) {
    auto s = ou(k);
    auto phi = parse_expression("z^2", {"z"});
    auto r = check_lyapunov(s.fields(), phi, SamplePlan::grid_box({{-5, 5}}, 41), 2.0, 2.0);
    EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples) << k;
  }
  // k < 1 fails for large |z|.
  auto r = check_lyapunov(ou(0.5).fields(), parse_expression("z^2", {"z"}), SamplePlan::grid_box({{-5, 5}}, 41), 2.0,
                          2.0);
  EXPECT_EQ(r.verdict, Verdict::violated);
}

TEST(CheckLyapunov, ZeroFieldsAnyNonNegativeBound) {
  SDESystem s;
  s.drift = VectorField::zero(1);
  s.noise = {VectorField::zero(1)};
  auto r = check_lyapunov(s.fields(), parse_expression("z^2", {"z"}), SamplePlan::grid_box({{-3, 3}}, 7), 0.0, 0.0);
  EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples);
}

TEST(CheckLyapunov, SineOuCatalogCertificate) {
  auto e = catalog::get("sine-ou");
  ASSERT_TRUE(e.lyapunov.has_value());
  auto r = check_lyapunov(e.system.fields(), e.lyapunov->phi, SamplePlan::grid_box({{-5, 5}}, 21), e.lyapunov->c1,
                          e.lyapunov->c2, {0.0, 0.5, 1, 2, 5, 10}, V({4}));
  EXPECT_EQ(r.verdict, Verdict::satisfied_on_samples);
}

TEST(Chart, RandomCirclesStructure) {
  auto e = catalog::get("random-circles");
  auto t = build_hierarchy(e.system.fields(), 1);
  auto c = build_chart(t, V({1, 0}), 0.1);
  EXPECT_EQ(c.rank(), 1);
  auto samples = sample_chart_domain(c, 100, 1);
  auto v = verify_chart_structure(c, t, samples, 1e-5, 1e-5);
  EXPECT_TRUE(v.transverse_ok);
  EXPECT_TRUE(v.sensitivity_ok);
  EXPECT_LE(v.max_round_trip, 1e-8);
  // First coordinate is radial: moving along it changes log-radius only.
  Vec tt = V({0.05, 0});
  Vec x = c.forward(tt);
  EXPECT_NEAR(std::atan2(x[1], x[0]), 0.0, 1e-12);
  EXPECT_NEAR(0.5 * std::log(x.squaredNorm()), 0.05, 1e-10);
}

TEST(Chart, ConstantFieldsGiveTranslation) {
  SDESystem s;
  s.drift = VectorField::parse({"0", "0"}, {"x", "y"});
  s.noise = {VectorField::parse({"1", "0"}, {"x", "y"}), VectorField::parse({"0", "1"}, {"x", "y"})};
  auto t = build_hierarchy(s.fields(), 1);
  Vec x0 = V({0.3, -0.2});
  auto c = build_chart(t, x0, 0.5);
  EXPECT_EQ(c.rank(), 2);
  Vec target = V({0.4, 0.1});
  NewtonReport nr;
  Vec coords = c.inverse(target, &nr);
  EXPECT_LE(max_abs(c.forward(coords) - target), 1e-14);
  EXPECT_LE(nr.iterations, 1);
  auto v = verify_chart_structure(c, t, sample_chart_domain(c, 10, 2));
  EXPECT_EQ(v.max_transverse, 0.0);
}

TEST(Chart, HeisenbergAvoidsSingularPlane) {
  auto t = table_of("ufg-heisenberg");
  auto c = build_chart(t, V({1, 0, 0}), 0.1);
  EXPECT_EQ(c.rank(), 2);
  auto v = verify_chart_structure(c, t, sample_chart_domain(c, 30, 3));
  EXPECT_TRUE(v.sensitivity_ok);
  EXPECT_LE(v.max_sensitivity, 1e-5);
  for (const auto& s : sample_chart_domain(c, 30, 4)) EXPECT_GT(c.forward(s)[0], 0.0);
}

TEST(Chart, RejectsBadRadius) {
  auto t = table_of("random-circles");
  EXPECT_THROW(build_chart(t, V({1, 0}), 0.0), UsageError);
  EXPECT_THROW(build_chart(t, V({1, 0, 0}), 0.1), DimensionError);
}
