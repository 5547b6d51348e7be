#pragma once

#include <optional>
#include <random>

#include "ufg/geometry.hpp"

namespace ufg {

struct NewtonConfig {
  double tol = 1e-12;
  int max_iterations = 50;
};

struct NewtonReport {
  int iterations = 0;
  double residual = 0;
};

// Local coordinates t -> e^{t1 X1} ... e^{tN XN} x0.
class Chart {
 public:
  const Vec& center() const { return center_; }
  int rank() const { return n_; }
  int dim() const { return static_cast<int>(center_.size()); }
  double radius() const { return radius_; }
  bool uses_drift_direction() const { return drift_dir_; }
  const std::vector<MultiIndex>& basis_indices() const { return basis_; }
  const std::vector<NumericField>& directions() const { return dirs_; }
  const NewtonConfig& newton() const { return newton_; }

  Vec forward(const Vec& t) const {
    check_dim(t);
    Vec y = center_;
    for (int i = dim() - 1; i >= 0; --i) y = flow(dirs_[i], y, t[i], flow_);
    return y;
  }

  // dPsi/dt, column i = D(e^{t1X1}..e^{t_{i-1}X_{i-1}}) X_i(y_i).
  Mat jacobian(const Vec& t, Vec* image = nullptr) const {
    check_dim(t);
    const int N = dim();
    std::vector<Vec> y(N + 1);
    std::vector<Mat> jf(N);
    y[N] = center_;
    for (int i = N - 1; i >= 0; --i) {
      FlowResult r = flow_jacobian(dirs_[i], y[i + 1], t[i], flow_);
      y[i] = r.point;
      jf[i] = r.jacobian;
    }
    Mat out(N, N);
    Mat acc = Mat::Identity(N, N);
    for (int i = 0; i < N; ++i) {
      Vec xi;
      dirs_[i].eval(y[i + 1], xi);
      // X_i is evaluated before its own flow; transport it through that flow.
      out.col(i) = acc * (jf[i] * xi);
      acc = acc * jf[i];
    }
    if (image) *image = y[0];
    return out;
  }

  Vec inverse(const Vec& x, NewtonReport* report = nullptr) const {
    if (x.size() != dim()) throw DimensionError("chart inverse: point has wrong dimension");
    Vec t = Vec::Zero(dim());
    Vec img;
    Mat j = jacobian(t, &img);
    double res = (img - x).norm();
    int it = 0;
    for (; it < newton_.max_iterations && res > newton_.tol * (1.0 + x.norm()); ++it) {
      Vec step = j.partialPivLu().solve(img - x);
      double s = 1.0;
      bool accepted = false;
      for (int k = 0; k < 30; ++k, s *= 0.5) {
        Vec tn = t - s * step;
        Vec in2;
        Mat j2 = jacobian(tn, &in2);
        double r2 = (in2 - x).norm();
        if (std::isfinite(r2) && r2 < res) {
          t = tn;
          img = in2;
          j = j2;
          res = r2;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    if (report) *report = {it, res};
    if (!(res <= newton_.tol * (1.0 + x.norm()) * 1e3))
      throw NumericError("chart inverse: Newton did not converge, residual " + std::to_string(res));
    return t;
  }

  // (JPsi)^{-1} V(Psi(t))
  template <PointField F>
  Vec pushforward(const F& v, const Vec& t) const {
    Vec img;
    Mat j = jacobian(t, &img);
    Vec vv;
    v.eval(img, vv);
    return j.partialPivLu().solve(vv);
  }

  friend Chart build_chart(const BracketTable&, const Vec&, double, double, NewtonConfig, FlowConfig,
                           std::optional<VectorField>);

 private:
  void check_dim(const Vec& t) const {
    if (t.size() != dim()) throw DimensionError("chart coordinate has wrong dimension");
  }

  Vec center_;
  int n_ = 0;
  double radius_ = 0;
  bool drift_dir_ = false;
  std::vector<MultiIndex> basis_;
  std::vector<NumericField> dirs_;
  NewtonConfig newton_;
  FlowConfig flow_;
};

inline Chart build_chart(const BracketTable& table, const Vec& x0, double eps, double rtol = 1e-8,
                         NewtonConfig newton = {}, FlowConfig flow_cfg = {},
                         std::optional<VectorField> v0_perp = std::nullopt) {
  detail::require_rtol(rtol);
  if (!(eps > 0)) throw UsageError("chart radius must be positive");
  const int N = table.dim();
  if (x0.size() != N) throw DimensionError("chart center has wrong dimension");
  const int n = rank_at(table, Distribution::delta, x0, rtol);
  for (int i = 0; i < N; ++i)
    for (double s : {-1.0, 1.0}) {
      Vec probe = x0;
      probe[i] += s * 0.5 * eps;
      if (rank_at(table, Distribution::delta, probe, rtol) != n)
        throw NumericError("build_chart: rank of the distribution is not locally constant (not a regular point)");
    }
  Chart c;
  c.center_ = x0;
  c.n_ = n;
  c.radius_ = eps;
  c.newton_ = newton;
  c.flow_ = flow_cfg;

  // Column-pivoted Gram-Schmidt; ties resolved by canonical order.
  auto idx = table.rm_indices();
  Mat f = table.frame(idx, x0);
  std::vector<Vec> q;
  std::vector<bool> used(idx.size(), false);
  double max_norm = 0;
  for (Eigen::Index j = 0; j < f.cols(); ++j) max_norm = std::max(max_norm, f.col(j).norm());
  while (static_cast<int>(c.basis_.size()) < n) {
    int best = -1;
    double best_norm = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (used[j]) continue;
      Vec r = f.col(static_cast<Eigen::Index>(j));
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& v : q) r -= v.dot(r) * v;
      if (r.norm() > best_norm) {
        best_norm = r.norm();
        best = static_cast<int>(j);
      }
    }
    if (best < 0 || best_norm <= rtol * max_norm) throw NumericError("build_chart: basis selection failed");
    used[best] = true;
    Vec r = f.col(best);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& v : q) r -= v.dot(r) * v;
    q.push_back(r / r.norm());
    c.basis_.push_back(idx[best]);
    c.dirs_.push_back(NumericField::from(table[idx[best]]));
  }

  NumericField perp;
  if (v0_perp) {
    perp = NumericField::from(*v0_perp);
  } else {
    auto shared = std::make_shared<const BracketTable>(table);
    perp = v0_perp_field(shared, rtol);
  }
  Vec p0 = perp(x0);
  if (p0.norm() > rtol && n < N) {
    Vec r = p0;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& v : q) r -= v.dot(r) * v;
    if (r.norm() > rtol * std::max(1.0, p0.norm())) {
      q.push_back(r / r.norm());
      c.dirs_.push_back(perp);
      c.drift_dir_ = true;
    }
  }
  // Constant completion spanning the orthogonal complement.
  for (int i = 0; static_cast<int>(c.dirs_.size()) < N && i < N; ++i) {
    Vec r = Vec::Unit(N, i);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& v : q) r -= v.dot(r) * v;
    if (r.norm() > 1e-6) {
      q.push_back(r / r.norm());
      c.dirs_.push_back(NumericField::constant(q.back()));
    }
  }
  return c;
}

struct ChartVerification {
  double max_transverse = 0;     // item (i)
  double max_sensitivity = 0;    // item (ii)
  double max_round_trip = 0;
  bool transverse_ok = false;
  bool sensitivity_ok = false;
  std::size_t samples = 0;
};

inline std::vector<Vec> sample_chart_domain(const Chart& chart, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec> out;
  for (std::size_t k = 0; k < count; ++k) {
    Vec t(chart.dim());
    for (int i = 0; i < chart.dim(); ++i) t[i] = chart.radius() * u(gen) / std::sqrt(static_cast<double>(chart.dim()));
    out.push_back(t);
  }
  return out;
}

inline ChartVerification verify_chart_structure(const Chart& chart, const BracketTable& table,
                                                const std::vector<Vec>& samples, double fd_step = 1e-5,
                                                double tol = 1e-5) {
  const int N = chart.dim(), n = chart.rank();
  ChartVerification v;
  v.samples = samples.size();
  std::vector<CompiledField> noise;
  for (int i = 1; i <= table.noise_count(); ++i) noise.emplace_back(table.base(i));
  for (const auto& a : table.rm_indices()) noise.emplace_back(table[a], false);
  CompiledField drift(table.base(0));
  auto last = [&](const Vec& w) { return w.tail(N - n); };
  for (const auto& t : samples) {
    if (t.norm() > chart.radius() * (1 + 1e-12)) throw UsageError("verify_chart_structure: sample outside the chart domain");
    Vec img;
    Mat j = chart.jacobian(t, &img);
    auto lu = j.partialPivLu();
    if (n < N) {
      for (const auto& f : noise) {
        Vec val(N);
        f.eval(img.data(), val.data());
        v.max_transverse = std::max(v.max_transverse, last(lu.solve(val)).cwiseAbs().maxCoeff());
      }
      for (int i = 0; i < n; ++i) {
        Vec tp = t, tm = t;
        tp[i] += fd_step;
        tm[i] -= fd_step;
        Vec d = (last(chart.pushforward(drift, tp)) - last(chart.pushforward(drift, tm))) / (2 * fd_step);
        v.max_sensitivity = std::max(v.max_sensitivity, d.cwiseAbs().maxCoeff());
      }
    }
    v.max_round_trip = std::max(v.max_round_trip, (chart.inverse(img) - t).norm());
  }
  v.transverse_ok = v.max_transverse <= tol;
  v.sensitivity_ok = v.max_sensitivity <= tol;
  return v;
}

}  // namespace ufg
