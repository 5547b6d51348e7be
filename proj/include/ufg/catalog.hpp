#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <functional>
#include <map>
#include <numbers>
#include <random>

#include "ufg/geometry.hpp"
#include "ufg/dynamics.hpp"

namespace ufg {

// [V_a, V_b] = rhs, with rhs written in closed form.
struct BracketIdentity {
  int a = 0;
  int b = 0;
  VectorField rhs;
  std::string label;
};

struct RankProfile {
  Vec point;
  int delta = 0;
  int delta0 = 0;
};

struct ParameterRange {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_open = true;
  bool hi_open = true;
  double fallback = 0;

  bool contains(double v) const {
    return std::isfinite(v) && (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  }
};

struct LyapunovData {
  Expr phi;
  double c1 = 0;
  double c2 = 0;
  int sde_block = 1;
};

struct Normalization {
  double value = 0;
  double error = 0;
};

struct CatalogEntry {
  std::string name;
  std::string summary;
  SDESystem system;
  int level = 1;
  std::vector<BracketIdentity> identities;
  std::optional<VectorField> v0_perp;
  std::vector<RankProfile> ranks;
  std::string limit_law;
  std::map<std::string, ParameterRange> parameter_ranges;
  std::vector<std::pair<double, double>> sample_box;  // where random checks draw points
  std::function<Vec(const Vec&)> chart_inverse;       // closed-form chart, if any
  Vec chart_center;
  std::optional<LyapunovData> lyapunov;
  std::optional<Expr> density;
  std::optional<Normalization> normalization;
  std::vector<std::string> notes;
};

namespace catalog {

namespace detail {

inline VectorField field(const std::vector<std::string>& comps, const std::vector<std::string>& vars,
                         const std::map<std::string, double>& params = {}) {
  return VectorField::parse(comps, vars, params);
}

inline VectorField times(const Expr& c, const VectorField& v) {
  std::vector<Expr> out;
  for (const auto& e : v.components()) out.push_back(simplify(c * e));
  return VectorField(out);
}

inline Expr expr(const std::string& s, const std::vector<std::string>& vars, const std::map<std::string, double>& p = {}) {
  return parse_expression(s, vars, p);
}

inline std::vector<Vec> random_points(const std::vector<std::pair<double, double>>& box, std::size_t n,
                                      std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<Vec> out;
  for (std::size_t k = 0; k < n; ++k) {
    Vec x(box.size());
    for (std::size_t i = 0; i < box.size(); ++i)
      x[i] = std::uniform_real_distribution<double>(box[i].first, box[i].second)(gen);
    out.push_back(x);
  }
  return out;
}

// Re-derive every stored identity with the fields module.
inline void verify(const CatalogEntry& e, double tol = 1e-10) {
  auto fields = e.system.fields();
  auto pts = random_points(e.sample_box, 20, 0x5eed);
  for (const auto& id : e.identities) {
    VectorField lhs = lie_bracket(fields.at(id.a), fields.at(id.b));
    for (const auto& x : pts) {
      double err = (lhs.evaluate(x) - id.rhs.evaluate(x)).cwiseAbs().maxCoeff();
      if (!(err <= tol)) throw NumericError("catalog entry '" + e.name + "': identity " + id.label + " fails (" +
                                            std::to_string(err) + ")");
    }
  }
  if (!e.v0_perp && e.ranks.empty()) return;
  BracketTable table = build_hierarchy(fields, e.level);
  if (e.v0_perp) {
    for (const auto& x : pts) {
      auto dec = decompose_drift(table, x);
      Vec known = e.v0_perp->evaluate(x);
      double err = (dec.perp - known).cwiseAbs().maxCoeff();
      if (!(err <= 1e-9 * (1.0 + known.norm())))
        throw NumericError("catalog entry '" + e.name + "': drift decomposition disagrees with the stored V0 perp");
    }
  }
  for (const auto& r : e.ranks) {
    if (rank_at(table, Distribution::delta, r.point) != r.delta ||
        rank_at(table, Distribution::delta0, r.point) != r.delta0)
      throw NumericError("catalog entry '" + e.name + "': rank profile mismatch");
  }
}

inline std::map<std::string, double> resolve(const std::string& name, const std::map<std::string, ParameterRange>& ranges,
                                             const std::map<std::string, double>& given) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : given)
    if (!ranges.count(k)) throw UsageError("catalog entry '" + name + "' has no parameter '" + k + "'");
  for (const auto& [k, r] : ranges) {
    auto it = given.find(k);
    double v = it == given.end() ? r.fallback : it->second;
    if (!r.contains(v))
      throw UsageError("parameter " + k + " = " + std::to_string(v) + " is out of range for '" + name + "'");
    out[k] = v;
  }
  return out;
}

inline SDESystem make_system(std::string name, std::vector<std::string> vars, const std::vector<std::string>& v0,
                             const std::vector<std::vector<std::string>>& noise,
                             const std::map<std::string, double>& params = {}) {
  SDESystem s;
  s.name = std::move(name);
  s.variables = vars;
  s.drift = field(v0, vars, params);
  for (const auto& v : noise) s.noise.push_back(field(v, vars, params));
  s.parameters = params;
  s.validate();
  return s;
}

}  // namespace detail

inline Normalization circle_line_normalization() {
  using boost::math::quadrature::gauss_kronrod;
  auto f = [](double z) {
    double c = 1.0 - std::cos(z);
    return c <= 0 ? 0.0 : std::exp(-1.0 / c) / c;
  };
  const double two_pi = 2 * std::numbers::pi;
  double prev = 0, prev_err = 0, cur = 0, cur_err = 0;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    prev = cur;
    prev_err = cur_err;
    cur = gauss_kronrod<double, 61>::integrate(f, delta, two_pi - delta, 15, 1e-14, &cur_err);
  }
  (void)prev_err;
  return {cur, cur_err + std::fabs(cur - prev)};
}

// Grushin marginal variance of Z_t started from zeta.
inline double grushin_variance(double k, double zeta, double t) {
  if (k == 0) return 2 * zeta * zeta * t;
  return zeta * zeta * std::expm1(2 * k * t) / k;
}

// Limit of the ODE coordinate of sine-ou.
inline double sine_ou_zeta_limit(double zeta0) {
  const double pi = std::numbers::pi;
  double n = std::round(zeta0 / (2 * pi));
  double r = zeta0 - 2 * pi * n;
  if (std::fabs(std::fabs(r) - pi) == 0) return zeta0;
  return 2 * pi * n;
}

inline double sine_ou_limit_variance(double k, double zeta_limit) { return zeta_limit * zeta_limit / k; }

inline CatalogEntry gbm() {
  CatalogEntry e;
  e.name = "gbm";
  e.summary = "geometric Brownian motion, V1 = x d/dx, V0 = -2 V1";
  std::vector<std::string> v{"x"};
  e.system = detail::make_system(e.name, v, {"-2*x"}, {{"x"}});
  e.identities.push_back({1, 0, VectorField::zero(1), "[V1,V0] = 0"});
  e.v0_perp = VectorField::zero(1);
  e.ranks = {{Vec::Constant(1, 1.0), 1, 1}, {Vec::Zero(1), 0, 0}};
  e.limit_law = "Hormander fails at x = 0; UFG holds with m = 1";
  e.sample_box = {{-3, 3}};
  return e;
}

inline CatalogEntry sinfields() {
  CatalogEntry e;
  e.name = "sinfields";
  e.summary = "V0 = sin(x) d/dx, V1 = sin(x) d/dy";
  std::vector<std::string> v{"x", "y"};
  e.system = detail::make_system(e.name, v, {"sin(x)", "0"}, {{"0", "sin(x)"}});
  e.identities.push_back({0, 1, detail::times(detail::expr("cos(x)", v), e.system.noise[0]), "[V0,V1] = cos(x) V1"});
  e.v0_perp = e.system.drift;
  e.limit_law = "UFG holds with m = 1";
  e.sample_box = {{-3, 3}, {-3, 3}};
  return e;
}

inline CatalogEntry psi() {
  CatalogEntry e;
  e.name = "non-ufg-psi";
  e.summary = "V0 = d/dx, V1 = exp(-1/x) d/dy on x > 0; neither UFG nor Hormander";
  std::vector<std::string> v{"x", "y"};
  e.system = detail::make_system(e.name, v, {"1", "0"}, {{"0", "exp(-1/x)"}});
  e.identities.push_back({1, 0, detail::times(detail::expr("-1/x^2", v), e.system.noise[0]), "[V1,V0] = -x^-2 V1"});
  e.v0_perp = detail::field({"1", "0"}, v);
  e.limit_law = "UFG coefficients blow up as x -> 0+";
  e.sample_box = {{0.05, 1}, {-1, 1}};
  e.notes.push_back("the smooth extension by 0 on x <= 0 is not representable; fields are defined for x > 0");
  return e;
}

inline CatalogEntry heisenberg() {
  CatalogEntry e;
  e.name = "ufg-heisenberg";
  e.summary = "V0 = (-x,-y,-2z), V1 = (0,0,-y), V2 = (0,1,x)";
  std::vector<std::string> v{"x", "y", "z"};
  e.system = detail::make_system(e.name, v, {"-x", "-y", "-2*z"}, {{"0", "0", "-y"}, {"0", "1", "x"}});
  e.level = 2;
  e.identities.push_back({1, 2, detail::field({"0", "0", "1"}, v), "[V1,V2] = d/dz"});
  e.identities.push_back({1, 0, -e.system.noise[0], "[V1,V0] = -V1"});
  e.identities.push_back({2, 0, -e.system.noise[1], "[V2,V0] = -V2"});
  e.v0_perp = detail::field({"-x", "0", "0"}, v);
  Vec a(3), b(3);
  a << 1, 0, 0;
  b << 0, 1, 1;
  e.ranks = {{a, 2, 3}, {b, 2, 2}};
  e.limit_law = "first coordinate is deterministic, x0 exp(-t); leaves are the planes x = const";
  e.sample_box = {{-2, 2}, {-2, 2}, {-2, 2}};
  return e;
}

inline CatalogEntry random_circles() {
  CatalogEntry e;
  e.name = "random-circles";
  e.summary = "V0 = (-y, x), V1 = (x, y): angle t, log-radius N(log r0, 2t)";
  std::vector<std::string> v{"x", "y"};
  e.system = detail::make_system(e.name, v, {"-y", "x"}, {{"x", "y"}});
  e.identities.push_back({1, 0, VectorField::zero(2), "[V1,V0] = 0"});
  e.v0_perp = e.system.drift;
  Vec a(2);
  a << 1, 0;
  e.ranks = {{a, 1, 2}, {Vec::Zero(2), 0, 0}};
  e.limit_law = "X_t = r0 exp(sqrt(2) B_t) (cos(t+th0), sin(t+th0))";
  e.sample_box = {{-2, 2}, {-2, 2}};
  e.chart_center = a;
  e.chart_inverse = [](const Vec& x) {
    Vec t(2);
    t << 0.5 * std::log(x.squaredNorm()), std::atan2(x[1], x[0]);
    return t;
  };
  return e;
}

inline const std::map<std::string, ParameterRange>& grushin_ranges() {
  static const std::map<std::string, ParameterRange> r{{"k", {-1e3, 1e3, false, false, -1.0}}};
  return r;
}

inline CatalogEntry grushin(const std::map<std::string, double>& given = {}) {
  CatalogEntry e;
  e.name = "grushin";
  e.parameter_ranges = grushin_ranges();
  auto p = detail::resolve(e.name, e.parameter_ranges, given);
  const double k = p.at("k");
  e.summary = "dzeta = k zeta dt, dZ = sqrt(2) zeta o dB";
  std::vector<std::string> v{"z", "zeta"};
  e.system = detail::make_system(e.name, v, {"0", "k*zeta"}, {{"zeta", "0"}}, p);
  e.identities.push_back({1, 0, e.system.noise[0].scaled(-k), "[V1,V0] = -k V1"});
  e.v0_perp = e.system.drift;
  Vec a(2);
  a << 0, 1;
  e.ranks = {{a, 1, k == 0 ? 1 : 2}};
  e.limit_law = "Z_t ~ N(z, zeta^2 (exp(2kt)-1)/k); tight iff k < 0";
  e.sample_box = {{-2, 2}, {-2, 2}};
  return e;
}

inline const std::map<std::string, ParameterRange>& sine_ou_ranges() {
  static const std::map<std::string, ParameterRange> r{{"k", {1.0, 1e3, true, false, 2.0}}};
  return r;
}

inline CatalogEntry sine_ou(const std::map<std::string, double>& given = {}) {
  CatalogEntry e;
  e.name = "sine-ou";
  e.parameter_ranges = sine_ou_ranges();
  auto p = detail::resolve(e.name, e.parameter_ranges, given);
  const double k = p.at("k");
  e.summary = "dzeta = -sin(zeta) dt, dZ = -k Z dt + sqrt(2) zeta o dB";
  std::vector<std::string> v{"z", "zeta"};
  e.system = detail::make_system(e.name, v, {"-k*z", "-sin(zeta)"}, {{"zeta", "0"}}, p);
  e.identities.push_back({1, 0, detail::times(detail::expr("-k + sin(zeta)/zeta", v, p), e.system.noise[0]),
                          "[V1,V0] = (-k + sin(zeta)/zeta) V1"});
  e.v0_perp = detail::field({"0", "-sin(zeta)"}, v);
  Vec a(2);
  a << 0, 4;
  e.ranks = {{a, 1, 2}};
  e.limit_law = "zeta -> 2n pi; Z -> N(0, (2n pi)^2 / k)";
  e.sample_box = {{-2, 2}, {0.1, 6}};
  // phi = sqrt(1+z^2): L phi <= k + zeta^2 - k phi, and zeta_t stays within [0, 2 pi] from zeta0 in (0, 2 pi].
  e.lyapunov = LyapunovData{detail::expr("sqrt(1 + z^2)", v), k + 4 * std::numbers::pi * std::numbers::pi, k, 1};
  return e;
}

inline CatalogEntry circle_line() {
  CatalogEntry e;
  e.name = "circle-line";
  e.summary = "dZ = sin(Z) dt + sqrt(2) (1 - cos Z) o dB";
  std::vector<std::string> v{"z"};
  e.system = detail::make_system(e.name, v, {"sin(z)"}, {{"1 - cos(z)"}});
  e.identities.push_back({1, 0, -e.system.noise[0], "[V1,V0] = -V1"});
  e.v0_perp = VectorField::zero(1);
  Vec pi(1);
  pi << std::numbers::pi;
  e.ranks = {{pi, 1, 1}, {Vec::Zero(1), 0, 0}};
  e.limit_law = "stationary densities rho_n on (2n pi, 2(n+1) pi); point masses at 2n pi";
  e.sample_box = {{0.2, 2 * std::numbers::pi - 0.2}};
  e.normalization = circle_line_normalization();
  e.density = detail::expr("exp(-1/(1-cos(z)))/(C*(1-cos(z)))", v, {{"C", e.normalization->value}});
  return e;
}

// dX = (A X + D) dt + sqrt(2) sum_i C_i dB^i.
inline CatalogEntry linear(const Mat& a, const Vec& d, const Mat& c) {
  const auto n = a.rows();
  if (a.cols() != n || d.size() != n || c.rows() != n || c.cols() < 1)
    throw DimensionError("linear system: A must be N x N, D length N and C N x d");
  CatalogEntry e;
  e.name = "linear";
  e.summary = "dX = (A X + D) dt + sqrt(2) C dB";
  SDESystem s;
  s.name = "linear";
  for (Eigen::Index i = 0; i < n; ++i) s.variables.push_back(default_variable_name(static_cast<int>(i)));
  std::vector<Expr> v0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Expr r = Expr::constant(d[i]);
    for (Eigen::Index j = 0; j < n; ++j)
      if (a(i, j) != 0) r = r + Expr::constant(a(i, j)) * Expr::variable(static_cast<int>(j));
    v0.push_back(simplify(r));
  }
  s.drift = VectorField(v0);
  for (Eigen::Index i = 0; i < c.cols(); ++i) s.noise.push_back(VectorField::constant(c.col(i)));
  s.validate();
  e.system = s;
  e.level = static_cast<int>(2 * n - 1);
  for (Eigen::Index i = 0; i < c.cols(); ++i)
    e.identities.push_back({static_cast<int>(i) + 1, 0, VectorField::constant(a * c.col(i)),
                            "[V" + std::to_string(i + 1) + ",V0] = A C" + std::to_string(i + 1)});
  e.limit_law = "Kalman rank condition decides hypoellipticity";
  e.sample_box.assign(n, {-2.0, 2.0});
  return e;
}

inline CatalogEntry linear_default() {
  Mat a(2, 2);
  a << 0, 1, -1, -1;
  Mat c = Mat::Zero(2, 1);
  c(1, 0) = 1;
  return linear(a, Vec::Zero(2), c);
}

inline std::vector<std::string> list() {
  return {"gbm", "sinfields", "linear", "non-ufg-psi", "ufg-heisenberg", "random-circles", "grushin", "sine-ou",
          "circle-line"};
}

inline CatalogEntry get(const std::string& name, const std::map<std::string, double>& params = {}) {
  auto no_params = [&] {
    if (!params.empty()) throw UsageError("catalog entry '" + name + "' takes no parameters");
  };
  CatalogEntry e;
  if (name == "gbm") no_params(), e = gbm();
  else if (name == "sinfields") no_params(), e = sinfields();
  else if (name == "linear") no_params(), e = linear_default();
  else if (name == "non-ufg-psi" || name == "psi") no_params(), e = psi();
  else if (name == "ufg-heisenberg" || name == "heisenberg") no_params(), e = heisenberg();
  else if (name == "random-circles") no_params(), e = random_circles();
  else if (name == "grushin") e = grushin(params);
  else if (name == "sine-ou") e = sine_ou(params);
  else if (name == "circle-line") no_params(), e = circle_line();
  else throw UsageError("unknown catalog entry '" + name + "'");
  detail::verify(e);
  return e;
}

}  // namespace catalog
}  // namespace ufg
