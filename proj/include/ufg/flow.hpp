#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <memory>

#include "ufg/fields.hpp"

namespace ufg {

template <class F>
concept PointField = requires(const F& f, const Vec& x, Vec& out, Mat& j) {
  { f.dim() } -> std::convertible_to<int>;
  f.eval(x, out);
  f.jacobian(x, j);
};

// Field given by callables; the Jacobian falls back to central differences.
class NumericField {
 public:
  using ValueFn = std::function<void(const Vec&, Vec&)>;
  using JacobianFn = std::function<void(const Vec&, Mat&)>;

  NumericField() = default;
  NumericField(int dim, ValueFn value, JacobianFn jac = {}, double fd_step = 1e-6)
      : dim_(dim), value_(std::move(value)), jac_(std::move(jac)), h_(fd_step) {}

  static NumericField from(const CompiledField& f) {
    auto p = std::make_shared<CompiledField>(f);
    return NumericField(
        f.dim(), [p](const Vec& x, Vec& o) { p->eval(x, o); },
        [p](const Vec& x, Mat& j) { p->jacobian(x, j); });
  }

  static NumericField from(const VectorField& f) { return from(CompiledField(f)); }

  static NumericField constant(const Vec& c) {
    int n = static_cast<int>(c.size());
    return NumericField(
        n, [c](const Vec&, Vec& o) { o = c; }, [n](const Vec&, Mat& j) { j = Mat::Zero(n, n); });
  }

  int dim() const { return dim_; }

  void eval(const Vec& x, Vec& out) const {
    value_(x, out);
    if (!out.allFinite()) throw DomainError("non-finite field value", "numeric field");
  }

  Vec operator()(const Vec& x) const {
    Vec o;
    eval(x, o);
    return o;
  }

  void jacobian(const Vec& x, Mat& j) const {
    if (jac_) {
      jac_(x, j);
      return;
    }
    j.resize(dim_, dim_);
    Vec xp = x, fp, fm;
    for (int i = 0; i < dim_; ++i) {
      double h = h_ * std::max(1.0, std::fabs(x[i]));
      xp[i] = x[i] + h;
      eval(xp, fp);
      xp[i] = x[i] - h;
      eval(xp, fm);
      xp[i] = x[i];
      j.col(i) = (fp - fm) / (2 * h);
    }
  }

 private:
  int dim_ = 0;
  ValueFn value_;
  JacobianFn jac_;
  double h_ = 1e-6;
};

struct FlowConfig {
  double dt = 1e-3;
  double max_time = 1e6;
};

namespace detail {

inline int flow_steps(double t, const FlowConfig& cfg) {
  if (!(cfg.dt > 0)) throw UsageError("flow dt must be positive");
  if (!std::isfinite(t) || std::fabs(t) > cfg.max_time) throw UsageError("flow time out of range");
  return std::max(1, static_cast<int>(std::ceil(std::fabs(t) / cfg.dt - 1e-9)));
}

inline void check_state(const Vec& x, double t) {
  if (!x.allFinite()) throw NumericError("flow blow-up at time " + std::to_string(t));
}

// Field evaluation failures inside a flow are reported with the time reached.
template <class Body>
void timed_step(double t, Body&& body) {
  try {
    body();
  } catch (const DomainError& e) {
    throw NumericError("flow blow-up at time " + std::to_string(t) + " (" + e.what() + ")");
  }
}

}  // namespace detail

// e^{tV}x by fixed-step RK4.
template <PointField F>
Vec flow(const F& v, const Vec& x, double t, const FlowConfig& cfg = {}) {
  if (t == 0) return x;
  int n = detail::flow_steps(t, cfg);
  double h = t / n;
  Vec y = x, k1, k2, k3, k4;
  for (int s = 0; s < n; ++s) {
    detail::timed_step(s * h, [&] {
      v.eval(y, k1);
      v.eval(y + 0.5 * h * k1, k2);
      v.eval(y + 0.5 * h * k2, k3);
      v.eval(y + h * k3, k4);
    });
    y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    detail::check_state(y, (s + 1) * h);
  }
  return y;
}

struct FlowResult {
  Vec point;
  Mat jacobian;
};

// Joint RK4 on (x, J) with J' = DV(x) J.
template <PointField F>
FlowResult flow_jacobian(const F& v, const Vec& x, double t, const FlowConfig& cfg = {}) {
  const int N = v.dim();
  FlowResult r{x, Mat::Identity(N, N)};
  if (t == 0) return r;
  int n = detail::flow_steps(t, cfg);
  double h = t / n;
  Vec k1, k2, k3, k4, y2, y3, y4;
  Mat d1, d2, d3, d4;
  Mat& J = r.jacobian;
  for (int s = 0; s < n; ++s) {
    const Vec& y = r.point;
    detail::timed_step(s * h, [&] {
      v.eval(y, k1);
      v.jacobian(y, d1);
      y2 = y + 0.5 * h * k1;
      v.eval(y2, k2);
      v.jacobian(y2, d2);
      y3 = y + 0.5 * h * k2;
      v.eval(y3, k3);
      v.jacobian(y3, d3);
      y4 = y + h * k3;
      v.eval(y4, k4);
      v.jacobian(y4, d4);
    });
    Mat j1 = d1 * J;
    Mat j2 = d2 * (J + 0.5 * h * j1);
    Mat j3 = d3 * (J + 0.5 * h * j2);
    Mat j4 = d4 * (J + h * j3);
    r.point += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    J += h / 6.0 * (j1 + 2 * j2 + 2 * j3 + j4);
    detail::check_state(r.point, (s + 1) * h);
    if (!J.allFinite()) throw NumericError("flow Jacobian blow-up at time " + std::to_string((s + 1) * h));
  }
  return r;
}

// (Ad_{tV} Y)(x) = D(e^{-tV})(e^{tV}x) Y(e^{tV}x), computed two ways.
template <PointField F, PointField G>
Vec adjoint_push(const F& v, const G& y_field, double t, const Vec& x, const FlowConfig& cfg = {},
                 double consistency_tol = 1e-7) {
  FlowResult fwd = flow_jacobian(v, x, t, cfg);
  Vec yv;
  y_field.eval(fwd.point, yv);
  FlowResult back = flow_jacobian(v, fwd.point, -t, cfg);
  Vec a = back.jacobian * yv;
  Eigen::JacobiSVD<Mat> svd(fwd.jacobian);
  const auto& s = svd.singularValues();
  if (s[s.size() - 1] <= 1e-12 * s[0]) throw NumericError("adjoint_push: near-singular flow Jacobian");
  Vec b = fwd.jacobian.partialPivLu().solve(yv);
  if ((a - b).norm() > consistency_tol * (1.0 + a.norm()))
    throw NumericError("adjoint_push: inconsistent routes (" + std::to_string((a - b).norm()) + ")");
  return a;
}

// Ad_{tV}Y as a field; its Jacobian is taken by central differences.
template <PointField F, PointField G>
NumericField adjoint_field(const F& v, const G& y_field, double t, const FlowConfig& cfg = {}, double fd_step = 1e-5) {
  return NumericField(
      v.dim(), [v, y_field, t, cfg](const Vec& x, Vec& o) { o = adjoint_push(v, y_field, t, x, cfg); }, {}, fd_step);
}

// [U,W](x) = DW(x) U(x) - DU(x) W(x)
template <PointField F, PointField G>
Vec bracket_at(const F& u, const G& w, const Vec& x) {
  Vec uv, wv;
  Mat du, dw;
  u.eval(x, uv);
  w.eval(x, wv);
  u.jacobian(x, du);
  w.jacobian(x, dw);
  return dw * uv - du * wv;
}

}  // namespace ufg
