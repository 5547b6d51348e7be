#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "ufg/dynamics.hpp"

namespace ufg {

class EmpiricalDistribution {
 public:
  explicit EmpiricalDistribution(std::vector<double> samples) : s_(std::move(samples)) {
    if (s_.size() < 2) throw UsageError("empirical distribution needs at least two samples");
    for (double v : s_)
      if (!std::isfinite(v)) throw UsageError("empirical distribution got a non-finite sample");
    std::sort(s_.begin(), s_.end());
  }
  const std::vector<double>& sorted() const { return s_; }
  std::size_t count() const { return s_.size(); }

  // Fraction of samples < v (strict) and <= v.
  double below(double v) const {
    return static_cast<double>(std::lower_bound(s_.begin(), s_.end(), v) - s_.begin()) / s_.size();
  }
  double at_most(double v) const {
    return static_cast<double>(std::upper_bound(s_.begin(), s_.end(), v) - s_.begin()) / s_.size();
  }

 private:
  std::vector<double> s_;
};

struct Reference {
  enum class Kind { gaussian, dirac, empirical } kind = Kind::gaussian;
  double mean = 0;
  double variance = 1;
  std::vector<double> samples;

  static Reference gaussian(double mu, double var) {
    if (!(var > 0)) throw UsageError("gaussian reference needs a positive variance");
    return {Kind::gaussian, mu, var, {}};
  }
  static Reference dirac(double a) { return {Kind::dirac, a, 0, {}}; }
  static Reference empirical(std::vector<double> s) { return {Kind::empirical, 0, 0, std::move(s)}; }
};

inline double normal_cdf(double x, double mu, double var) {
  return 0.5 * std::erfc(-(x - mu) / std::sqrt(2 * var));
}

// Gaussian and empirical references use the sup-norm CDF distance. For a point
// mass the sup-norm distance never decays for non-degenerate samples, so the
// Levy distance is returned: the smallest e with P(X < a-e) <= e and
// P(X > a+e) <= e. It is 0 when every sample equals a.
inline double ks_distance(const std::vector<double>& samples, const Reference& ref) {
  EmpiricalDistribution emp(samples);
  const auto& s = emp.sorted();
  const double n = static_cast<double>(s.size());
  switch (ref.kind) {
    case Reference::Kind::gaussian: {
      if (!(ref.variance > 0)) throw UsageError("gaussian reference needs a positive variance");
      double d = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        double f = normal_cdf(s[i], ref.mean, ref.variance);
        d = std::max({d, (i + 1) / n - f, f - i / n});
      }
      return d;
    }
    case Reference::Kind::dirac: {
      auto g = [&](double e) {
        return std::max(emp.below(ref.mean - e), 1.0 - emp.at_most(ref.mean + e));
      };
      if (g(0.0) <= 0.0) return 0.0;
      double lo = 0, hi = 1;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        double mid = 0.5 * (lo + hi);
        (g(mid) <= mid ? hi : lo) = mid;
      }
      return hi;
    }
    case Reference::Kind::empirical: {
      EmpiricalDistribution other(ref.samples);
      double d = 0;
      for (double v : s) d = std::max(d, std::fabs(emp.at_most(v) - other.at_most(v)));
      for (double v : other.sorted()) d = std::max(d, std::fabs(emp.at_most(v) - other.at_most(v)));
      return d;
    }
  }
  return 1.0;
}

struct ConvergenceReport {
  std::vector<double> times;
  std::vector<std::vector<double>> ks;  // [time][coordinate], NaN without reference
  std::vector<double> escape_fraction;
  std::vector<double> decay_rate;       // per coordinate, fitted on log ks
  std::vector<std::optional<bool>> pass;  // per coordinate at the final time
  std::size_t blow_up_count = 0;
};

// Least-squares slope of log(y) against t, sign flipped (positive = decay).
inline double fit_decay_rate(const std::vector<double>& t, const std::vector<double>& y) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  int n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(y[i] > 0) || !std::isfinite(y[i])) continue;
    double ly = std::log(y[i]);
    st += t[i];
    sy += ly;
    stt += t[i] * t[i];
    sty += t[i] * ly;
    ++n;
  }
  if (n < 2) return kNaN;
  double den = n * stt - st * st;
  return den == 0 ? kNaN : -(n * sty - st * sy) / den;
}

inline ConvergenceReport convergence_study(const SDESystem& sys, const Vec& x0, const std::vector<double>& times,
                                           const std::vector<std::optional<Reference>>& refs,
                                           const SimulationConfig& cfg, double escape_radius,
                                           const std::vector<double>& tolerances = {}) {
  if (static_cast<int>(refs.size()) != sys.dim()) throw DimensionError("one reference slot per coordinate is required");
  PathEnsemble e = simulate_paths(sys, x0, times, cfg);
  ConvergenceReport r;
  r.times = times;
  r.blow_up_count = e.blow_up_count;
  for (std::size_t k = 1; k < e.n_times(); ++k) {
    std::vector<double> row(sys.dim(), kNaN);
    for (int j = 0; j < sys.dim(); ++j) {
      if (!refs[j]) continue;
      auto m = e.marginal(k, j);
      if (m.size() >= 2) row[j] = ks_distance(m, *refs[j]);
    }
    r.ks.push_back(row);
    std::size_t out = 0;
    for (std::size_t p = 0; p < e.n_paths; ++p)
      out += e.blown_up[p] || e.state(p, k).norm() > escape_radius;
    r.escape_fraction.push_back(static_cast<double>(out) / e.n_paths);
  }
  for (int j = 0; j < sys.dim(); ++j) {
    std::vector<double> col;
    for (const auto& row : r.ks) col.push_back(row[j]);
    r.decay_rate.push_back(refs[j] ? fit_decay_rate(times, col) : kNaN);
    if (refs[j] && j < static_cast<int>(tolerances.size()))
      r.pass.push_back(col.back() <= tolerances[j]);
    else
      r.pass.push_back(std::nullopt);
  }
  return r;
}

struct Estimate {
  double value = 0;
  double stderr_ = 0;
};

namespace detail {

inline Estimate mean_and_stderr(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
}

inline double observable(const Tape& f, Eigen::Map<const Vec> x) {
  double out;
  f.eval(x.data(), &out);
  return out;
}

}  // namespace detail

// P_t f(x) - P_t f(y) with common random numbers, per time.
inline std::vector<Estimate> same_leaf_coupling(const SDESystem& sys, const Vec& x, const Vec& y, const Expr& f,
                                                const std::vector<double>& times, const SimulationConfig& cfg) {
  auto ex = simulate_paths(sys, x, times, cfg);
  auto ey = simulate_paths(sys, y, times, cfg);
  Tape tf(std::span<const Expr>(&f, 1));
  std::vector<Estimate> out;
  for (std::size_t k = 1; k < ex.n_times(); ++k) {
    std::vector<double> diff;
    for (std::size_t p = 0; p < ex.n_paths; ++p) {
      if (ex.blown_up[p] || ey.blown_up[p]) continue;
      diff.push_back(detail::observable(tf, ex.state(p, k)) - detail::observable(tf, ey.state(p, k)));
    }
    if (diff.size() < 2) throw NumericError("same_leaf_coupling: too many blown-up paths");
    out.push_back(detail::mean_and_stderr(diff));
  }
  return out;
}

// V P_t f(x) by central differences along dir(x)/|dir(x)|, scaled by |dir(x)|.
inline std::vector<Estimate> semigroup_derivative(const SDESystem& sys, const Expr& f, const VectorField& direction,
                                                  const Vec& x, const std::vector<double>& times,
                                                  const SimulationConfig& cfg, std::optional<double> h = std::nullopt,
                                                  bool common_random_numbers = true) {
  Vec dir = direction.evaluate(x);
  double dn = dir.norm();
  if (!(dn > 0)) throw UsageError("semigroup_derivative: direction vanishes at x");
  double step = h ? *h : 1e-3 * (1.0 + x.norm());
  if (!(step > 0)) throw UsageError("semigroup_derivative: h must be positive");
  Vec u = dir / dn;
  auto ep = simulate_paths(sys, x + step * u, times, cfg);
  SimulationConfig other = cfg;
  if (!common_random_numbers) other.seed = splitmix64(cfg.seed ^ 0xa0761d6478bd642fULL);
  auto em = simulate_paths(sys, x - step * u, times, other);
  Tape tf(std::span<const Expr>(&f, 1));
  std::vector<Estimate> out;
  for (std::size_t k = 1; k < ep.n_times(); ++k) {
    std::vector<double> plus, minus, diff;
    for (std::size_t p = 0; p < ep.n_paths; ++p) {
      if (ep.blown_up[p] || em.blown_up[p]) continue;
      double a = detail::observable(tf, ep.state(p, k)), b = detail::observable(tf, em.state(p, k));
      plus.push_back(a);
      minus.push_back(b);
      diff.push_back((a - b) / (2 * step) * dn);
    }
    if (diff.size() < 2) throw NumericError("semigroup_derivative: too many blown-up paths");
    if (common_random_numbers) {
      out.push_back(detail::mean_and_stderr(diff));
    } else {
      auto a = detail::mean_and_stderr(plus), b = detail::mean_and_stderr(minus);
      out.push_back({(a.value - b.value) / (2 * step) * dn,
                     std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_) / (2 * step) * dn});
    }
  }
  return out;
}

// L* rho = -d(V0 rho) + sum_i d(Vi d(Vi rho)) in one dimension.
inline Expr fokker_planck_operator(const SDESystem& sys, const Expr& rho) {
  if (sys.dim() != 1) throw DimensionError("fokker_planck_residual needs a one-dimensional system");
  Expr r = simplify(-differentiate(simplify(sys.drift[0] * rho), 0));
  for (const auto& v : sys.noise) {
    Expr inner = simplify(v[0] * differentiate(simplify(v[0] * rho), 0));
    r = simplify(r + differentiate(inner, 0));
  }
  return r;
}

struct FokkerPlanckResult {
  double max_abs = 0;
  std::vector<double> grid;
  std::vector<double> profile;  // NaN where rho is undefined
  std::size_t skipped = 0;
};

inline FokkerPlanckResult fokker_planck_residual(const SDESystem& sys, const Expr& rho, const std::vector<double>& grid) {
  Expr op = fokker_planck_operator(sys, rho);
  FokkerPlanckResult r;
  r.grid = grid;
  for (double z : grid) {
    try {
      double v = evaluate(op, {z});
      r.profile.push_back(v);
      r.max_abs = std::max(r.max_abs, std::fabs(v));
    } catch (const DomainError&) {
      r.profile.push_back(kNaN);
      ++r.skipped;
    }
  }
  return r;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> g;
  if (n == 1) return {0.5 * (lo + hi)};
  for (std::size_t i = 0; i < n; ++i) g.push_back(lo + (hi - lo) * i / (n - 1));
  return g;
}

}  // namespace ufg
