#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "ufg/geometry.hpp"

namespace ufg {

// dX = V0 dt + sqrt(2) sum_i Vi o dB^i
struct SDESystem {
  std::string name;
  std::vector<std::string> variables;
  VectorField drift;
  std::vector<VectorField> noise;
  std::map<std::string, double> parameters;

  int dim() const { return drift.dim(); }
  int noise_count() const { return static_cast<int>(noise.size()); }

  std::vector<VectorField> fields() const {
    std::vector<VectorField> f{drift};
    f.insert(f.end(), noise.begin(), noise.end());
    return f;
  }

  void validate() const {
    if (noise.empty()) throw DimensionError("system needs at least one noise field");
    for (const auto& v : noise)
      if (v.dim() != dim()) throw DimensionError("noise field dimension differs from drift");
    if (!variables.empty() && static_cast<int>(variables.size()) != dim())
      throw DimensionError("variable name count differs from dimension");
  }

  std::vector<std::string> variable_names() const {
    if (!variables.empty()) return variables;
    std::vector<std::string> v;
    for (int i = 0; i < dim(); ++i) v.push_back(default_variable_name(i));
    return v;
  }
};

// b = V0 + sum_i (DVi) Vi
inline VectorField stratonovich_to_ito(const SDESystem& sys) {
  std::vector<Expr> c;
  for (int j = 0; j < sys.dim(); ++j) {
    Expr e = sys.drift[j];
    for (const auto& v : sys.noise) e = simplify(e + apply(v, v[j]));
    c.push_back(e);
  }
  return VectorField(std::move(c));
}

// ---------------------------------------------------------------------------
// Seeding

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t splitmix64(std::uint64_t x) { return splitmix64_next(x); }

// Path p draws from mt19937_64 seeded with splitmix64(seed ^ splitmix64(p)).
inline std::uint64_t path_seed(std::uint64_t master, std::uint64_t path_index) {
  return splitmix64(master ^ splitmix64(path_index));
}

class PathRng {
 public:
  explicit PathRng(std::uint64_t seed) : gen_(seed) {}
  double normal() { return dist_(gen_); }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Compiled system: one tape for V0..Vd.

class CompiledSystem {
 public:
  explicit CompiledSystem(const SDESystem& sys, bool with_jacobians = false) : n_(sys.dim()), d_(sys.noise_count()) {
    sys.validate();
    std::vector<Expr> all;
    for (const auto& f : sys.fields())
      for (const auto& e : f.components()) all.push_back(e);
    tape_ = Tape(std::span<const Expr>(all));
    if (with_jacobians) {
      std::vector<Expr> jac;
      for (const auto& f : sys.fields())
        for (const auto& e : jacobian_exprs(f)) jac.push_back(e);
      jac_ = Tape(std::span<const Expr>(jac));
    }
    fields_ = sys.fields();
  }

  int dim() const { return n_; }
  int noise_count() const { return d_; }

  // out holds (d+1) blocks of N values: V0, V1, ..., Vd.
  void eval(const double* x, double* out) const { tape_.eval(x, out); }
  // out holds (d+1) row-major N x N Jacobians.
  void jacobians(const double* x, double* out) const { jac_.eval(x, out); }

  const std::vector<VectorField>& fields() const { return fields_; }

 private:
  int n_, d_;
  Tape tape_, jac_;
  std::vector<VectorField> fields_;
};

namespace detail {

inline double sqrt2() { return 1.4142135623730951; }

// One stochastic Heun step in place. Returns false on non-finite state.
inline bool heun_step(const CompiledSystem& cs, double* x, double h, const double* db, double* f, double* ft,
                      double* xt) {
  const int N = cs.dim(), d = cs.noise_count();
  cs.eval(x, f);
  for (int j = 0; j < N; ++j) {
    double v = x[j] + f[j] * h;
    for (int i = 0; i < d; ++i) v += sqrt2() * f[(i + 1) * N + j] * db[i];
    xt[j] = v;
  }
  cs.eval(xt, ft);
  bool ok = true;
  for (int j = 0; j < N; ++j) {
    double v = x[j] + 0.5 * (f[j] + ft[j]) * h;
    for (int i = 0; i < d; ++i) v += 0.5 * sqrt2() * (f[(i + 1) * N + j] + ft[(i + 1) * N + j]) * db[i];
    x[j] = v;
    ok = ok && std::isfinite(v);
  }
  return ok;
}

// Substep counts landing exactly on each recorded time.
inline std::vector<int> substeps(const std::vector<double>& times, double dt) {
  std::vector<int> s;
  for (std::size_t k = 1; k < times.size(); ++k) {
    double q = (times[k] - times[k - 1]) / dt;
    double r = std::round(q);
    int n = std::fabs(q - r) < 1e-9 * std::max(1.0, q) ? static_cast<int>(r) : static_cast<int>(std::ceil(q));
    s.push_back(std::max(1, n));
  }
  return s;
}

template <class Body>
void parallel_paths(std::size_t n_paths, unsigned threads, Body body) {
  unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_paths)));
  if (t == 1) {
    for (std::size_t p = 0; p < n_paths; ++p) body(p);
    return;
  }
  std::vector<std::exception_ptr> errors(t);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      try {
        std::size_t lo = n_paths * w / t, hi = n_paths * (w + 1) / t;
        for (std::size_t p = lo; p < hi; ++p) body(p);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

struct SimulationConfig {
  double dt = 1e-3;
  std::size_t n_paths = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double divergence_radius = 1e8;
};

struct PathEnsemble {
  std::uint64_t seed = 0;
  double dt = 0;
  std::vector<double> times;
  std::size_t n_paths = 0;
  int dim = 0;
  int noise = 0;
  std::vector<double> states;      // [path][time][coordinate]
  std::vector<double> increments;  // [path][interval][noise], summed over substeps
  std::vector<std::uint8_t> blown_up;
  std::size_t blow_up_count = 0;

  std::size_t n_times() const { return times.size(); }

  Eigen::Map<const Vec> state(std::size_t p, std::size_t k) const {
    return Eigen::Map<const Vec>(states.data() + (p * n_times() + k) * dim, dim);
  }
  double& at(std::size_t p, std::size_t k, int j) { return states[(p * n_times() + k) * dim + j]; }
  double at(std::size_t p, std::size_t k, int j) const { return states[(p * n_times() + k) * dim + j]; }

  double increment(std::size_t p, std::size_t interval, int i) const {
    return increments[(p * (n_times() - 1) + interval) * noise + i];
  }

  // Coordinate j of every path at stored time k.
  std::vector<double> marginal(std::size_t k, int j, bool skip_blown_up = true) const {
    std::vector<double> v;
    for (std::size_t p = 0; p < n_paths; ++p)
      if (!(skip_blown_up && blown_up[p])) v.push_back(at(p, k, j));
    return v;
  }

  std::size_t time_index(double t) const {
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::fabs(times[k] - t) <= 1e-12 * std::max(1.0, std::fabs(t))) return k;
    throw UsageError("time " + std::to_string(t) + " is not stored in the ensemble");
  }
};

// record_times: strictly increasing, positive; time 0 is prepended.
inline PathEnsemble simulate_paths(const SDESystem& sys, const Vec& x0, std::vector<double> record_times,
                                   const SimulationConfig& cfg) {
  if (!(cfg.dt > 0)) throw UsageError("dt must be positive");
  if (cfg.n_paths < 1) throw UsageError("n_paths must be at least 1");
  if (x0.size() != sys.dim()) throw DimensionError("initial point has wrong dimension");
  if (record_times.empty()) throw UsageError("no record times");
  CompiledSystem cs(sys);
  PathEnsemble e;
  e.seed = cfg.seed;
  e.dt = cfg.dt;
  e.times.push_back(0.0);
  for (double t : record_times) {
    if (!(t > e.times.back())) throw UsageError("record times must be strictly increasing and positive");
    e.times.push_back(t);
  }
  e.n_paths = cfg.n_paths;
  e.dim = sys.dim();
  e.noise = sys.noise_count();
  const std::size_t nt = e.times.size();
  e.states.assign(e.n_paths * nt * e.dim, 0.0);
  e.increments.assign(e.n_paths * (nt - 1) * e.noise, 0.0);
  e.blown_up.assign(e.n_paths, 0);
  auto steps = detail::substeps(e.times, cfg.dt);
  const int N = e.dim, d = e.noise;
  detail::parallel_paths(e.n_paths, cfg.threads, [&](std::size_t p) {
    PathRng rng(path_seed(cfg.seed, p));
    std::vector<double> x(x0.data(), x0.data() + N), f((d + 1) * N), ft((d + 1) * N), xt(N), db(d);
    for (int j = 0; j < N; ++j) e.at(p, 0, j) = x[j];
    bool dead = false;
    for (std::size_t k = 1; k < nt; ++k) {
      double h = (e.times[k] - e.times[k - 1]) / steps[k - 1];
      double sh = std::sqrt(h);
      double* inc = &e.increments[(p * (nt - 1) + (k - 1)) * d];
      for (int s = 0; s < steps[k - 1]; ++s) {
        for (int i = 0; i < d; ++i) {
          db[i] = sh * rng.normal();
          inc[i] += db[i];
        }
        if (dead) continue;
        bool ok = detail::heun_step(cs, x.data(), h, db.data(), f.data(), ft.data(), xt.data());
        double r2 = 0;
        for (double v : x) r2 += v * v;
        if (!ok || std::sqrt(r2) > cfg.divergence_radius) dead = true;
      }
      for (int j = 0; j < N; ++j)
        e.at(p, k, j) = dead ? std::numeric_limits<double>::quiet_NaN() : x[j];
    }
    e.blown_up[p] = dead;
  });
  e.blow_up_count = static_cast<std::size_t>(std::count(e.blown_up.begin(), e.blown_up.end(), 1));
  return e;
}

// Uniform grid k*stride*dt up to T (T itself always stored).
inline std::vector<double> stride_times(double t_end, double dt, std::size_t stride) {
  if (!(t_end > 0) || !(dt > 0) || stride < 1) throw UsageError("invalid time grid");
  std::vector<double> t;
  const double step = dt * static_cast<double>(stride);
  for (std::size_t k = 1;; ++k) {
    double v = step * static_cast<double>(k);
    if (v >= t_end * (1 - 1e-12)) break;
    t.push_back(v);
  }
  t.push_back(t_end);
  return t;
}

inline PathEnsemble simulate_paths(const SDESystem& sys, const Vec& x0, double t_end, const SimulationConfig& cfg,
                                   std::size_t stride = 1) {
  return simulate_paths(sys, x0, stride_times(t_end, cfg.dt, stride), cfg);
}

// Z_t = e^{-t V0perp}(X_t) for every path and stored time.
template <PointField F>
PathEnsemble auxiliary_process(const PathEnsemble& ens, const F& v0_perp, const FlowConfig& cfg = {},
                               unsigned threads = 1) {
  PathEnsemble z = ens;
  detail::parallel_paths(ens.n_paths, threads, [&](std::size_t p) {
    if (ens.blown_up[p]) return;
    for (std::size_t k = 0; k < ens.n_times(); ++k) {
      Vec x = ens.state(p, k);
      Vec r = flow(v0_perp, x, -ens.times[k], cfg);
      for (int j = 0; j < ens.dim; ++j) z.at(p, k, j) = r[j];
    }
  });
  return z;
}

enum class LimitStatus { converged, diverged, not_converged };

inline const char* to_string(LimitStatus s) {
  switch (s) {
    case LimitStatus::converged: return "converged";
    case LimitStatus::diverged: return "diverged";
    case LimitStatus::not_converged: return "not_converged";
  }
  return "?";
}

struct FlowLimit {
  LimitStatus status = LimitStatus::not_converged;
  Vec point;
  double time = 0;
  double residual = 0;
};

// W_infinity(x): follow the flow of V0perp until it stalls or leaves the radius.
template <PointField F>
FlowLimit flow_limit(const F& v0_perp, const Vec& x, double t_max, double stall_tol = 1e-8,
                     double divergence_radius = 1e8, const FlowConfig& cfg = {}) {
  if (!(t_max > 0)) throw UsageError("flow_limit horizon must be positive");
  FlowLimit r;
  r.point = x;
  Vec v;
  v0_perp.eval(x, v);
  r.residual = v.norm();
  const double h = cfg.dt;
  while (true) {
    if (r.residual < stall_tol) {
      r.status = LimitStatus::converged;
      return r;
    }
    if (r.point.norm() > divergence_radius) {
      r.status = LimitStatus::diverged;
      return r;
    }
    if (r.time >= t_max) return r;
    r.point = flow(v0_perp, r.point, h, cfg);
    r.time += h;
    v0_perp.eval(r.point, v);
    r.residual = v.norm();
  }
}

struct RankSample {
  double time;
  int rank;
};

inline std::vector<RankSample> rank_along_path(const PathEnsemble& ens, std::size_t path, const BracketTable& table,
                                               double rtol = 1e-8) {
  std::vector<RankSample> out;
  for (std::size_t k = 0; k < ens.n_times(); ++k) {
    Vec x = ens.state(path, k);
    if (!x.allFinite()) break;
    out.push_back({ens.times[k], rank_at(table, Distribution::delta0, x, rtol)});
  }
  return out;
}

}  // namespace ufg
