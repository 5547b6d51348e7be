#pragma once

#include <limits>

#include "ufg/dynamics.hpp"

namespace ufg {

struct VariationalOptions {
  int reorth_every = 100;
  double inverse_tol = 1e-6;
};

struct VariationalPath {
  std::vector<double> times;
  std::vector<Vec> x;
  std::vector<Mat> j;
  std::vector<Mat> j_inv;
  std::vector<Vec> increments;  // one per interval
  double max_inverse_error = 0;

  std::size_t size() const { return times.size(); }
};

namespace detail {

inline Mat row_major_block(const double* p, int n) {
  Mat m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = p[r * n + c];
  return m;
}

}  // namespace detail

// Joint Heun integration of X, J and the companion inverse K with shared
// increments; uses the same random stream as simulate_paths for path_index.
inline VariationalPath simulate_variational(const SDESystem& sys, const Vec& x0, double t_end, double dt,
                                            std::uint64_t seed, std::size_t path_index = 0,
                                            const VariationalOptions& opt = {}) {
  if (x0.size() != sys.dim()) throw DimensionError("initial point has wrong dimension");
  CompiledSystem cs(sys, true);
  const int N = sys.dim(), d = sys.noise_count();
  VariationalPath vp;
  vp.times.push_back(0.0);
  for (double t : stride_times(t_end, dt, 1)) vp.times.push_back(t);
  auto steps = detail::substeps(vp.times, dt);
  PathRng rng(path_seed(seed, path_index));
  std::vector<double> f((d + 1) * N), ft((d + 1) * N), jb((d + 1) * N * N), jbt((d + 1) * N * N);
  Vec x = x0, xt(N);
  Mat J = Mat::Identity(N, N), K = Mat::Identity(N, N);
  vp.x.push_back(x);
  vp.j.push_back(J);
  vp.j_inv.push_back(K);
  const Mat I = Mat::Identity(N, N);
  int since = 0;
  for (std::size_t k = 1; k < vp.times.size(); ++k) {
    double h = (vp.times[k] - vp.times[k - 1]) / steps[k - 1];
    double sh = std::sqrt(h);
    Vec inc = Vec::Zero(d);
    for (int s = 0; s < steps[k - 1]; ++s) {
      Vec db(d);
      for (int i = 0; i < d; ++i) db[i] = sh * rng.normal();
      inc += db;
      cs.eval(x.data(), f.data());
      cs.jacobians(x.data(), jb.data());
      Mat a = detail::row_major_block(jb.data(), N) * h;
      for (int i = 0; i < d; ++i) a += detail::sqrt2() * db[i] * detail::row_major_block(jb.data() + (i + 1) * N * N, N);
      for (int j = 0; j < N; ++j) {
        double v = x[j] + f[j] * h;
        for (int i = 0; i < d; ++i) v += detail::sqrt2() * f[(i + 1) * N + j] * db[i];
        xt[j] = v;
      }
      cs.eval(xt.data(), ft.data());
      cs.jacobians(xt.data(), jbt.data());
      Mat at = detail::row_major_block(jbt.data(), N) * h;
      for (int i = 0; i < d; ++i) at += detail::sqrt2() * db[i] * detail::row_major_block(jbt.data() + (i + 1) * N * N, N);
      for (int j = 0; j < N; ++j) {
        double v = x[j] + 0.5 * (f[j] + ft[j]) * h;
        for (int i = 0; i < d; ++i) v += 0.5 * detail::sqrt2() * (f[(i + 1) * N + j] + ft[(i + 1) * N + j]) * db[i];
        x[j] = v;
      }
      // One Heun step is J <- P J; the inverse companion takes K <- K P^{-1}.
      // The explicit Heun step for dK = -K dA misses P^{-1} at fourth order in
      // the increments, which accumulates to O(dt) in J K - I.
      Mat step = I + 0.5 * (a + at) + 0.5 * at * a;
      J = step * J;
      K = step.transpose().partialPivLu().solve(K.transpose()).transpose();
      if (!x.allFinite() || !J.allFinite() || !K.allFinite())
        throw NumericError("variational path blow-up at time " + std::to_string(vp.times[k]));
    }
    double err = (J * K - I).cwiseAbs().maxCoeff();
    vp.max_inverse_error = std::max(vp.max_inverse_error, err);
    if (err > opt.inverse_tol)
      throw NumericError("J inverse consistency failure (" + std::to_string(err) + ") at time " +
                         std::to_string(vp.times[k]));
    if (++since >= opt.reorth_every || k + 1 == vp.times.size()) {
      K = J.partialPivLu().inverse();
      since = 0;
    }
    vp.x.push_back(x);
    vp.j.push_back(J);
    vp.j_inv.push_back(K);
    vp.increments.push_back(inc);
  }
  return vp;
}

// C_t = sum_k int_0^t K_s V_k V_k^T K_s^T ds by the trapezoid rule on the stored grid.
inline Mat reduced_covariance(const VariationalPath& path, const SDESystem& sys, std::size_t upto = 0) {
  if (upto == 0) upto = path.size() - 1;
  const int N = sys.dim();
  CompiledSystem cs(sys);
  std::vector<double> f((sys.noise_count() + 1) * N);
  auto integrand = [&](std::size_t k) {
    cs.eval(path.x[k].data(), f.data());
    Mat g = Mat::Zero(N, N);
    for (int i = 1; i <= sys.noise_count(); ++i) {
      Vec v = path.j_inv[k] * Eigen::Map<const Vec>(f.data() + i * N, N);
      g += v * v.transpose();
    }
    return g;
  };
  Mat c = Mat::Zero(N, N);
  Mat prev = integrand(0);
  for (std::size_t k = 1; k <= upto; ++k) {
    Mat cur = integrand(k);
    c += 0.5 * (path.times[k] - path.times[k - 1]) * (prev + cur);
    prev = cur;
  }
  return 0.5 * (c + c.transpose());
}

inline Mat malliavin_matrix(const VariationalPath& path, const SDESystem& sys, std::size_t upto = 0) {
  if (upto == 0) upto = path.size() - 1;
  Mat m = path.j[upto] * reduced_covariance(path, sys, upto) * path.j[upto].transpose();
  return 0.5 * (m + m.transpose());
}

struct MalliavinReport {
  Mat matrix;
  int split = 0;
  double off_block_max = 0;  // relative to the largest entry
  double upper_condition = std::numeric_limits<double>::infinity();
  double min_eigenvalue = 0;
  double max_eigenvalue = 0;
  bool block_holds = false;
  bool upper_invertible = false;
};

inline MalliavinReport block_and_rank_check(const Mat& m, int n, double cond_threshold = 1e10,
                                            double block_tol = 1e-6) {
  if (m.rows() != m.cols()) throw DimensionError("block_and_rank_check: matrix must be square");
  if (n < 1 || n > m.rows()) throw DimensionError("block_and_rank_check: split out of range");
  MalliavinReport r;
  r.matrix = m;
  r.split = n;
  const Eigen::Index N = m.rows();
  double scale = m.cwiseAbs().maxCoeff();
  double off = 0;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i >= n || j >= n) off = std::max(off, std::fabs(m(i, j)));
  r.off_block_max = scale > 0 ? off / scale : 0.0;
  auto s = Eigen::JacobiSVD<Mat>(m.topLeftCorner(n, n)).singularValues();
  if (s[0] > 0 && s[n - 1] > 0) r.upper_condition = s[0] / s[n - 1];
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  r.min_eigenvalue = es.eigenvalues()[0];
  r.max_eigenvalue = es.eigenvalues()[N - 1];
  r.block_holds = r.off_block_max <= block_tol;
  r.upper_invertible = r.upper_condition <= cond_threshold;
  return r;
}

}  // namespace ufg
