#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ufg/fields.hpp"
#include "ufg/flow.hpp"

namespace ufg {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kRankFloor = 1e-12;

struct SamplePlan {
  std::vector<std::pair<double, double>> box;
  int grid = 0;
  std::vector<Vec> points;
  std::function<bool(const Vec&)> exclude;

  static SamplePlan grid_box(std::vector<std::pair<double, double>> box, int n) {
    SamplePlan p;
    p.box = std::move(box);
    p.grid = n;
    return p;
  }

  static SamplePlan explicit_points(std::vector<Vec> pts) {
    SamplePlan p;
    p.points = std::move(pts);
    return p;
  }

  // Grid includes both endpoints; a single point per axis sits at the midpoint.
  std::vector<Vec> generate() const {
    std::vector<Vec> out;
    if (!points.empty()) {
      for (const auto& x : points)
        if (!exclude || !exclude(x)) out.push_back(x);
    } else {
      if (box.empty() || grid < 1) throw UsageError("sample plan needs a box and grid >= 1");
      for (const auto& [lo, hi] : box)
        if (!(lo < hi)) throw UsageError("sample plan box requires lo < hi");
      const int dim = static_cast<int>(box.size());
      std::vector<int> idx(dim, 0);
      while (true) {
        Vec x(dim);
        for (int i = 0; i < dim; ++i) {
          auto [lo, hi] = box[i];
          x[i] = grid == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * idx[i] / (grid - 1);
        }
        if (!exclude || !exclude(x)) out.push_back(x);
        int k = 0;
        while (k < dim && ++idx[k] == grid) idx[k++] = 0;
        if (k == dim) break;
      }
    }
    if (out.empty()) throw UsageError("sample plan produced no points");
    return out;
  }
};

enum class Verdict { satisfied_on_samples, violated, suspect };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::satisfied_on_samples: return "satisfied_on_samples";
    case Verdict::violated: return "violated";
    case Verdict::suspect: return "suspect";
  }
  return "?";
}

struct PointRecord {
  std::size_t index = 0;
  Vec point;
  double residual = kNaN;
  double max_coefficient = kNaN;
  double min_eigenvalue = kNaN;
  double max_eigenvalue = kNaN;
  double min_singular_value = kNaN;
  double certified_lambda0 = kNaN;
  int rank = -1;
  bool singular = false;
  bool failed = false;
  bool violates = false;
  std::string note;
};

struct ConditionReport {
  std::string condition;
  int level = 0;
  std::optional<double> lambda0;
  double tolerance = 0;
  std::vector<PointRecord> records;
  Verdict verdict = Verdict::satisfied_on_samples;
  std::optional<std::size_t> worst;
  std::size_t singular_count = 0;
  std::size_t failed_count = 0;
  double certified_lambda0 = kNaN;
  double max_residual = 0;
  double max_coefficient = 0;
};

namespace detail {

inline Eigen::VectorXd singular_values(const Mat& f) {
  if (f.cols() == 0 || f.rows() == 0) return Eigen::VectorXd();
  return Eigen::JacobiSVD<Mat>(f).singularValues();
}

inline int rank_from(const Eigen::VectorXd& s, double rtol, double floor = kRankFloor) {
  if (s.size() == 0 || !(s[0] >= floor)) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s[i] > rtol * s[0];
  return r;
}

// Worst record: largest value of key among non-singular, non-failed records.
template <class Key>
std::optional<std::size_t> worst_of(const std::vector<PointRecord>& recs, Key key) {
  std::optional<std::size_t> w;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].singular || recs[i].failed) continue;
    double v = key(recs[i]);
    if (std::isnan(v)) continue;
    if (v > best) {
      best = v;
      w = i;
    }
  }
  return w;
}

inline void require_rtol(double rtol) {
  if (!(rtol > 0 && rtol < 1)) throw UsageError("rtol must lie in (0,1)");
}

}  // namespace detail

enum class Distribution { delta, delta0 };

inline int rank_at(const BracketTable& table, Distribution which, const Vec& x, double rtol = 1e-8) {
  detail::require_rtol(rtol);
  Mat f = evaluate_frame(table, which == Distribution::delta ? FrameSubset::rm : FrameSubset::rm_with_drift, x);
  return detail::rank_from(detail::singular_values(f), rtol);
}

struct DriftDecomposition {
  Vec parallel;
  Vec perp;
  double residual = 0;
};

inline DriftDecomposition decompose_drift_frame(const Mat& frame, const Vec& v0, double rtol) {
  DriftDecomposition d;
  d.parallel = Vec::Zero(v0.size());
  if (frame.cols() > 0) {
    Eigen::JacobiSVD<Mat> svd(frame, Eigen::ComputeThinU);
    int r = detail::rank_from(svd.singularValues(), rtol);
    if (r > 0) {
      Mat u = svd.matrixU().leftCols(r);
      d.parallel = u * (u.transpose() * v0);
    }
  }
  d.perp = v0 - d.parallel;
  for (Eigen::Index j = 0; j < frame.cols(); ++j)
    d.residual = std::max(d.residual, std::fabs(d.perp.dot(frame.col(j))) / (1.0 + d.perp.norm()));
  return d;
}

inline DriftDecomposition decompose_drift(const BracketTable& table, const Vec& x, double rtol = 1e-8) {
  detail::require_rtol(rtol);
  Mat u = table.evaluate_unique(x);
  auto idx = table.rm_indices();
  Mat f(table.dim(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) f.col(static_cast<Eigen::Index>(k)) = u.col(table.field_id(idx[k]));
  return decompose_drift_frame(f, u.col(table.drift_id()), rtol);
}

// V0-perp as a pointwise numeric field.
inline NumericField v0_perp_field(std::shared_ptr<const BracketTable> table, double rtol = 1e-8) {
  return NumericField(table->dim(), [table, rtol](const Vec& x, Vec& o) { o = decompose_drift(*table, x, rtol).perp; });
}

// ---------------------------------------------------------------------------
// UFG

namespace detail {

// Greedy selection in canonical order by modified Gram-Schmidt.
inline std::vector<int> greedy_basis(const Mat& cols, double rtol, double& max_norm) {
  max_norm = 0;
  for (Eigen::Index j = 0; j < cols.cols(); ++j) max_norm = std::max(max_norm, cols.col(j).norm());
  std::vector<int> chosen;
  if (!(max_norm > 1e-300)) return chosen;
  std::vector<Vec> q;
  for (Eigen::Index j = 0; j < cols.cols() && static_cast<Eigen::Index>(chosen.size()) < cols.rows(); ++j) {
    Vec r = cols.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& v : q) r -= v.dot(r) * v;
    double nr = r.norm();
    if (nr > rtol * max_norm) {
      q.push_back(r / nr);
      chosen.push_back(static_cast<int>(j));
    }
  }
  return chosen;
}

inline Verdict finish(ConditionReport& rep) {
  for (const auto& r : rep.records) {
    rep.singular_count += r.singular;
    rep.failed_count += r.failed;
  }
  bool violated = false;
  for (const auto& r : rep.records) violated = violated || r.violates;
  rep.verdict = violated ? Verdict::violated : Verdict::satisfied_on_samples;
  return rep.verdict;
}

}  // namespace detail

inline ConditionReport check_ufg(const BracketTable& table, const SamplePlan& plan, int m,
                                 double residual_tol = 1e-8, double coeff_blowup_threshold = 1e6,
                                 double rtol = 1e-8) {
  if (m < 1 || m > table.level()) throw UsageError("check_ufg: table must be built to level >= m");
  ConditionReport rep;
  rep.condition = "ufg";
  rep.level = m;
  rep.tolerance = residual_tol;
  std::vector<MultiIndex> basis_idx, targets;
  std::set<int> seen;
  for (const auto& a : table.indices()) {
    if (a.length() <= m)
      basis_idx.push_back(a);
    else if (a.length() <= m + 2 && seen.insert(table.field_id(a)).second)
      targets.push_back(a);
  }
  auto pts = plan.generate();
  for (std::size_t p = 0; p < pts.size(); ++p) {
    PointRecord rec;
    rec.index = p;
    rec.point = pts[p];
    try {
      Mat u = table.evaluate_unique(pts[p]);
      Mat cand(table.dim(), static_cast<Eigen::Index>(basis_idx.size()));
      for (std::size_t k = 0; k < basis_idx.size(); ++k)
        cand.col(static_cast<Eigen::Index>(k)) = u.col(table.field_id(basis_idx[k]));
      double max_norm = 0;
      auto chosen = detail::greedy_basis(cand, rtol, max_norm);
      if (chosen.empty()) {
        rec.singular = true;
        rec.note = "all frame columns vanish";
      } else {
        Mat b(table.dim(), static_cast<Eigen::Index>(chosen.size()));
        for (std::size_t k = 0; k < chosen.size(); ++k) b.col(static_cast<Eigen::Index>(k)) = cand.col(chosen[k]);
        auto qr = b.colPivHouseholderQr();
        rec.residual = 0;
        rec.max_coefficient = 0;
        for (const auto& t : targets) {
          Vec tv = u.col(table.field_id(t));
          Vec c = qr.solve(tv);
          double res = (tv - b * c).norm() / (1.0 + tv.norm());
          if (res > rec.residual) {
            rec.residual = res;
            rec.note = "worst target " + t.to_string();
          }
          rec.max_coefficient = std::max(rec.max_coefficient, c.cwiseAbs().maxCoeff());
        }
        rec.rank = static_cast<int>(chosen.size());
        rec.violates = rec.residual > residual_tol;
      }
    } catch (const DomainError& e) {
      rec.failed = true;
      rec.note = e.what();
    }
    rep.records.push_back(std::move(rec));
  }
  detail::finish(rep);
  for (const auto& r : rep.records) {
    if (r.singular || r.failed) continue;
    rep.max_residual = std::max(rep.max_residual, r.residual);
    rep.max_coefficient = std::max(rep.max_coefficient, r.max_coefficient);
  }
  if (rep.verdict == Verdict::violated) {
    rep.worst = detail::worst_of(rep.records, [](const PointRecord& r) { return r.residual; });
  } else {
    if (rep.max_coefficient > coeff_blowup_threshold) rep.verdict = Verdict::suspect;
    rep.worst = detail::worst_of(rep.records, [](const PointRecord& r) { return r.max_coefficient; });
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Hormander-type rank conditions

enum class HormanderVariant { hc, phc };

inline ConditionReport check_hormander(const BracketTable& table, const SamplePlan& plan, HormanderVariant variant,
                                       double rtol = 1e-8) {
  detail::require_rtol(rtol);
  ConditionReport rep;
  rep.condition = variant == HormanderVariant::hc ? "hc" : "phc";
  rep.level = table.level();
  rep.tolerance = rtol;
  auto pts = plan.generate();
  const int N = table.dim();
  for (std::size_t p = 0; p < pts.size(); ++p) {
    PointRecord rec;
    rec.index = p;
    rec.point = pts[p];
    try {
      Mat f = evaluate_frame(table, variant == HormanderVariant::hc ? FrameSubset::rm_with_drift : FrameSubset::rm, pts[p]);
      auto s = detail::singular_values(f);
      rec.rank = detail::rank_from(s, rtol);
      rec.min_singular_value = s.size() >= N ? s[N - 1] : 0.0;
      rec.residual = static_cast<double>(N - rec.rank);
      rec.violates = rec.rank < N;
    } catch (const DomainError& e) {
      rec.failed = true;
      rec.note = e.what();
    }
    rep.records.push_back(std::move(rec));
  }
  detail::finish(rep);
  rep.worst = detail::worst_of(rep.records, [](const PointRecord& r) { return r.residual; });
  return rep;
}

struct KalmanResult {
  bool satisfied = false;
  int rank = 0;
};

inline KalmanResult check_kalman(const Mat& a, const Mat& q, double rtol = 1e-8) {
  if (a.rows() != a.cols() || q.rows() != a.rows() || q.cols() < 1)
    throw DimensionError("check_kalman: shape mismatch");
  const Eigen::Index n = a.rows();
  Mat k(n, n * q.cols());
  Mat block = q;
  for (Eigen::Index i = 0; i < n; ++i) {
    k.middleCols(i * q.cols(), q.cols()) = block;
    block = a * block;
  }
  int r = detail::rank_from(detail::singular_values(k), rtol);
  return {r == n, r};
}

// ---------------------------------------------------------------------------
// Obtuse angle conditions.
//
// For a symmetric rank-two matrix sym(u b^T) the nonzero eigenvalues are
// (u.b +- |u||b|)/2, so "(u.jet)(b.jet) <= 0 for every jet" is exactly
// negative semidefiniteness of sym(u b^T).

struct PairEigen {
  double min = 0, max = 0;
};

inline PairEigen outer_sym_eigen(const Vec& u, const Vec& b) {
  double ub = u.dot(b), nn = u.norm() * b.norm();
  if (u.size() == 1) return {ub, ub};
  PairEigen e{0.5 * (ub - nn), 0.5 * (ub + nn)};
  if (u.size() > 2) {
    e.min = std::min(e.min, 0.0);
    e.max = std::max(e.max, 0.0);
  }
  return e;
}

// Largest lambda with max eig sym((a + lambda b) b^T) <= tau.
inline double certified_lambda(const Vec& a, const Vec& b, double tau) {
  double bb = b.squaredNorm();
  if (!(bb > 0)) return std::numeric_limits<double>::infinity();
  double c = a.dot(b) / bb;
  double h = (a - c * b).norm() * std::sqrt(bb) / 2;
  return (tau - h * h / tau) / bb - c;
}

namespace detail {

inline void finish_oac(ConditionReport& rep, const std::optional<double>& lambda0) {
  rep.certified_lambda0 = std::numeric_limits<double>::infinity();
  for (auto& r : rep.records) {
    if (r.failed || r.singular) continue;
    rep.certified_lambda0 = std::min(rep.certified_lambda0, r.certified_lambda0);
    if (!lambda0) r.violates = !(r.certified_lambda0 > 0);
  }
  finish(rep);
  if (lambda0)
    rep.worst = worst_of(rep.records, [](const PointRecord& r) { return r.residual; });
  else
    rep.worst = worst_of(rep.records, [](const PointRecord& r) { return -r.certified_lambda0; });
}

}  // namespace detail

// With lambda0 absent the verdict asks for a certified lambda0 > 0.
inline ConditionReport check_oac(const BracketTable& table, const SamplePlan& plan, std::optional<double> lambda0,
                                 double tol = 1e-9, int m = 0) {
  if (m == 0) m = table.level();
  if (m < 1 || m > table.level()) throw UsageError("check_oac: level out of range");
  if (lambda0 && !(*lambda0 > 0)) throw UsageError("check_oac: lambda0 must be positive");
  ConditionReport rep;
  rep.condition = "oac";
  rep.level = m;
  rep.lambda0 = lambda0;
  rep.tolerance = tol;
  std::vector<std::pair<int, int>> pairs;  // (id of alpha, id of alpha*0)
  for (const auto& a : table.indices_up_to(m)) pairs.push_back({table.field_id(a), table.field_id(a.extended(0))});
  auto pts = plan.generate();
  for (std::size_t p = 0; p < pts.size(); ++p) {
    PointRecord rec;
    rec.index = p;
    rec.point = pts[p];
    try {
      Mat u = table.evaluate_unique(pts[p]);
      rec.certified_lambda0 = std::numeric_limits<double>::infinity();
      rec.max_eigenvalue = -std::numeric_limits<double>::infinity();
      rec.min_eigenvalue = std::numeric_limits<double>::infinity();
      rec.residual = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (auto [ib, ia] : pairs) {
        Vec b = u.col(ib), a = u.col(ia);
        if (b.norm() == 0) continue;
        any = true;
        double tau = tol * (1.0 + a.norm() * b.norm());
        rec.certified_lambda0 = std::min(rec.certified_lambda0, certified_lambda(a, b, tau));
        if (lambda0) {
          auto e = outer_sym_eigen(a + *lambda0 * b, b);
          rec.max_eigenvalue = std::max(rec.max_eigenvalue, e.max);
          rec.min_eigenvalue = std::min(rec.min_eigenvalue, e.min);
          rec.residual = std::max(rec.residual, e.max / (1.0 + a.norm() * b.norm()));
          rec.violates = rec.violates || e.max > tau;
        }
      }
      if (!any) {
        rec.singular = true;
        rec.note = "all frame columns vanish";
      }
    } catch (const DomainError& e) {
      rec.failed = true;
      rec.note = e.what();
    }
    rep.records.push_back(std::move(rec));
  }
  detail::finish_oac(rep, lambda0);
  return rep;
}

// Coefficient vector of the operator X Y at a point: symmetrized second-order
// part (diagonal, then doubled off-diagonal) followed by the first-order part DY X.
inline Vec product_operator_coefficients(const Vec& x_val, const Vec& y_val, const Mat& dy) {
  const Eigen::Index n = x_val.size();
  Vec u(n * (n + 1) / 2 + n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) u[k++] = x_val[i] * y_val[i];
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) u[k++] = x_val[i] * y_val[j] + x_val[j] * y_val[i];
  u.tail(n) = dy * x_val;
  return u;
}

inline ConditionReport check_oac2(const BracketTable& table, const SamplePlan& plan, std::optional<double> lambda0,
                                  double tol = 1e-9, int m = 0) {
  if (m == 0) m = table.level();
  if (m < 1 || m > table.level()) throw UsageError("check_oac2: level out of range");
  if (lambda0 && !(*lambda0 > 0)) throw UsageError("check_oac2: lambda0 must be positive");
  ConditionReport rep;
  rep.condition = "oac2";
  rep.level = m;
  rep.lambda0 = lambda0;
  rep.tolerance = tol;
  std::vector<MultiIndex> idx;
  for (const auto& a : table.indices_up_to(m))
    if (!a.is_singleton()) idx.push_back(a);
  // Jacobians are needed for V_beta and V_{beta*0}.
  std::map<int, CompiledField> jac;
  for (const auto& a : idx)
    for (int id : {table.field_id(a), table.field_id(a.extended(0))})
      if (!jac.count(id)) jac.emplace(id, CompiledField(table.unique_field(id)));
  auto pts = plan.generate();
  for (std::size_t p = 0; p < pts.size(); ++p) {
    PointRecord rec;
    rec.index = p;
    rec.point = pts[p];
    try {
      const Vec& x = pts[p];
      Mat u = table.evaluate_unique(x);
      std::map<int, Mat> d;
      for (auto& [id, f] : jac) f.jacobian(x, d[id]);
      rec.certified_lambda0 = std::numeric_limits<double>::infinity();
      rec.max_eigenvalue = -std::numeric_limits<double>::infinity();
      rec.min_eigenvalue = std::numeric_limits<double>::infinity();
      rec.residual = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (const auto& al : idx)
        for (const auto& be : idx) {
          if (al == be) continue;
          int ia = table.field_id(al), ia0 = table.field_id(al.extended(0));
          int ib = table.field_id(be), ib0 = table.field_id(be.extended(0));
          Vec u2 = product_operator_coefficients(u.col(ia), u.col(ib), d[ib]);
          if (u2.norm() == 0) continue;
          Vec u1 = product_operator_coefficients(u.col(ia), u.col(ib0), d[ib0]) +
                   product_operator_coefficients(u.col(ia0), u.col(ib), d[ib]);
          any = true;
          double tau = tol * (1.0 + u1.norm() * u2.norm());
          rec.certified_lambda0 = std::min(rec.certified_lambda0, certified_lambda(u1, u2, tau));
          if (lambda0) {
            auto e = outer_sym_eigen(u1 + *lambda0 * u2, u2);
            rec.max_eigenvalue = std::max(rec.max_eigenvalue, e.max);
            rec.min_eigenvalue = std::min(rec.min_eigenvalue, e.min);
            rec.residual = std::max(rec.residual, e.max / (1.0 + u1.norm() * u2.norm()));
            rec.violates = rec.violates || e.max > tau;
          }
        }
      if (!any) {
        rec.singular = true;
        rec.note = "no admissible pair is nonzero";
      }
    } catch (const DomainError& e) {
      rec.failed = true;
      rec.note = e.what();
    }
    rep.records.push_back(std::move(rec));
  }
  detail::finish_oac(rep, lambda0);
  return rep;
}

// ---------------------------------------------------------------------------
// Lyapunov certificate for ODE+SDE systems whose first n coordinates form the
// SDE block and whose remaining coordinates solve an autonomous ODE.

inline Expr apply_block(const VectorField& v, const Expr& f, int n) {
  Expr r = Expr::constant(0.0);
  for (int i = 0; i < n; ++i) {
    if (v[i].is_zero()) continue;
    Expr d = differentiate(f, i);
    if (d.is_zero()) continue;
    r = simplify(r + simplify(v[i] * d));
  }
  return r;
}

inline Expr lyapunov_generator(const std::vector<VectorField>& fields, const Expr& phi, int n) {
  Expr l = apply_block(fields[0], phi, n);
  for (std::size_t i = 1; i < fields.size(); ++i)
    l = simplify(l + apply_block(fields[i], apply_block(fields[i], phi, n), n));
  return l;
}

// ODE block trajectory zeta_t from zeta0 at the given times.
inline std::vector<Vec> ode_block_states(const VectorField& drift, int n, const Vec& zeta0,
                                         const std::vector<double>& times, const FlowConfig& cfg) {
  const int N = drift.dim();
  if (zeta0.size() != N - n) throw DimensionError("ODE initial value has wrong dimension");
  std::vector<Expr> comps(N, Expr::constant(0.0));
  for (int j = n; j < N; ++j) {
    for (int i = 0; i < n; ++i)
      if (!differentiate(drift[j], i).is_zero())
        throw UsageError("ODE block of the drift depends on the SDE coordinates");
    comps[j] = drift[j];
  }
  CompiledField ode{VectorField(comps)};
  std::vector<Vec> out;
  Vec x = Vec::Zero(N);
  x.tail(N - n) = zeta0;
  for (double t : times) out.push_back(flow(ode, x, t, cfg).tail(N - n));
  return out;
}

inline ConditionReport check_lyapunov(const std::vector<VectorField>& fields, const Expr& phi, const SamplePlan& plan,
                                      double c1, double c2, const std::vector<double>& ode_solution_times = {0.0},
                                      const Vec& ode_initial = Vec(), const FlowConfig& cfg = {},
                                      double tol = 1e-9) {
  const int N = fields.front().dim();
  const int n = N - static_cast<int>(ode_initial.size());
  if (n < 1) throw DimensionError("check_lyapunov: empty SDE block");
  if (phi.max_variable() >= n) throw UsageError("check_lyapunov: phi must depend only on the SDE block");
  ConditionReport rep;
  rep.condition = "lyapunov";
  rep.tolerance = tol;
  Expr l = lyapunov_generator(fields, phi, n);
  std::vector<Vec> zetas = n == N ? std::vector<Vec>{Vec()} : ode_block_states(fields[0], n, ode_initial, ode_solution_times, cfg);
  auto pts = plan.generate();
  std::size_t index = 0;
  for (std::size_t k = 0; k < zetas.size(); ++k)
    for (const auto& z : pts) {
      if (z.size() != n) throw DimensionError("check_lyapunov: plan dimension must equal the SDE block size");
      PointRecord rec;
      rec.index = index++;
      rec.point = Vec(N);
      rec.point.head(n) = z;
      if (n < N) rec.point.tail(N - n) = zetas[k];
      try {
        std::span<const double> sp(rec.point.data(), static_cast<std::size_t>(N));
        double lv = evaluate(l, sp);
        double bound = c1 - c2 * evaluate(phi, sp);
        rec.residual = lv - bound;
        rec.max_eigenvalue = lv;
        rec.violates = rec.residual > tol * (1.0 + std::fabs(lv) + std::fabs(bound));
      } catch (const DomainError& e) {
        rec.failed = true;
        rec.note = e.what();
      }
      rep.records.push_back(std::move(rec));
    }
  detail::finish(rep);
  rep.worst = detail::worst_of(rep.records, [](const PointRecord& r) { return r.residual; });
  for (const auto& r : rep.records)
    if (!r.failed) rep.max_residual = std::max(rep.max_residual, r.residual);
  return rep;
}

}  // namespace ufg
