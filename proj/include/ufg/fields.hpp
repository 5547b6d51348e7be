#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <compare>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ufg/expr.hpp"

namespace ufg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class VectorField {
 public:
  VectorField() = default;

  explicit VectorField(std::vector<Expr> components) : comps_(std::move(components)) {
    int n = dim();
    for (int j = 0; j < n; ++j)
      if (comps_[j].max_variable() >= n)
        throw DimensionError("component " + std::to_string(j) + " references variable " +
                             std::to_string(comps_[j].max_variable()) + " in dimension " +
                             std::to_string(n));
  }

  static VectorField zero(int n) { return VectorField(std::vector<Expr>(n, Expr::constant(0.0))); }

  static VectorField constant(const Vec& c) {
    std::vector<Expr> v;
    for (Eigen::Index i = 0; i < c.size(); ++i) v.push_back(Expr::constant(c[i]));
    return VectorField(std::move(v));
  }

  static VectorField parse(const std::vector<std::string>& texts, const std::vector<std::string>& vars,
                           const std::map<std::string, double>& constants = {}) {
    if (texts.size() != vars.size())
      throw DimensionError("field has " + std::to_string(texts.size()) + " components, expected " +
                           std::to_string(vars.size()));
    std::vector<Expr> c;
    for (const auto& t : texts) c.push_back(parse_expression(t, vars, constants));
    return VectorField(std::move(c));
  }

  int dim() const { return static_cast<int>(comps_.size()); }
  const Expr& operator[](int j) const { return comps_[j]; }
  const std::vector<Expr>& components() const { return comps_; }

  bool is_zero() const {
    return std::all_of(comps_.begin(), comps_.end(), [](const Expr& e) { return e.is_zero(); });
  }

  std::size_t hash() const {
    std::size_t h = comps_.size();
    for (const auto& e : comps_) h ^= e.hash() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }

  friend bool operator==(const VectorField& a, const VectorField& b) { return a.comps_ == b.comps_; }

  // Checked evaluation; throws DomainError with the offending component.
  Vec evaluate(const Vec& x) const {
    if (x.size() != dim()) throw DimensionError("point has wrong dimension");
    Vec out(dim());
    std::span<const double> p(x.data(), static_cast<std::size_t>(x.size()));
    for (int j = 0; j < dim(); ++j) out[j] = ufg::evaluate(comps_[j], p);
    return out;
  }

  VectorField operator-() const {
    std::vector<Expr> c;
    for (const auto& e : comps_) c.push_back(simplify(-e));
    return VectorField(std::move(c));
  }

  VectorField scaled(double s) const {
    std::vector<Expr> c;
    for (const auto& e : comps_) c.push_back(simplify(Expr::constant(s) * e));
    return VectorField(std::move(c));
  }

  std::vector<std::string> to_strings(std::span<const std::string> names = {}) const {
    std::vector<std::string> s;
    for (const auto& e : comps_) s.push_back(print(e, names));
    return s;
  }

 private:
  std::vector<Expr> comps_;
};

// V f = sum_i V^i d_i f, simplified.
inline Expr apply(const VectorField& v, const Expr& f) {
  Expr r = Expr::constant(0.0);
  for (int i = 0; i < v.dim(); ++i) {
    if (v[i].is_zero()) continue;
    Expr d = differentiate(f, i);
    if (d.is_zero()) continue;
    r = simplify(r + simplify(v[i] * d));
  }
  return r;
}

inline VectorField lie_bracket(const VectorField& v, const VectorField& w) {
  if (v.dim() != w.dim()) throw DimensionError("lie_bracket: dimension mismatch");
  std::vector<Expr> c;
  for (int j = 0; j < v.dim(); ++j) c.push_back(simplify(apply(v, w[j]) - apply(w, v[j])));
  return VectorField(std::move(c));
}

// DV[j][i] = d_i V^j
inline std::vector<Expr> jacobian_exprs(const VectorField& v) {
  std::vector<Expr> d;
  for (int j = 0; j < v.dim(); ++j)
    for (int i = 0; i < v.dim(); ++i) d.push_back(differentiate(v[j], i));
  return d;
}

// Compiled values and Jacobian of one field.
class CompiledField {
 public:
  CompiledField() = default;
  explicit CompiledField(const VectorField& v, bool with_jacobian = true) : sym_(v) {
    values_ = Tape(std::span<const Expr>(v.components()));
    if (with_jacobian) {
      auto d = jacobian_exprs(v);
      jac_ = Tape(std::span<const Expr>(d));
      has_jac_ = true;
    }
  }

  int dim() const { return sym_.dim(); }
  const VectorField& symbolic() const { return sym_; }

  void eval(const double* x, double* out) const { values_.eval(x, out); }

  void eval(const Vec& x, Vec& out) const {
    out.resize(dim());
    values_.eval(x.data(), out.data());
    check(x, out);
  }

  Vec operator()(const Vec& x) const {
    Vec out;
    eval(x, out);
    return out;
  }

  void jacobian(const double* x, double* row_major) const { jac_.eval(x, row_major); }

  void jacobian(const Vec& x, Mat& j) const {
    if (!has_jac_) throw Error("CompiledField compiled without Jacobian");
    int n = dim();
    thread_local std::vector<double> buf;
    buf.resize(static_cast<std::size_t>(n) * n);
    jac_.eval(x.data(), buf.data());
    j.resize(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) j(r, c) = buf[static_cast<std::size_t>(r) * n + c];
    if (!j.allFinite()) {
      auto d = jacobian_exprs(sym_);
      std::span<const double> p(x.data(), static_cast<std::size_t>(x.size()));
      for (const auto& e : d) ufg::evaluate(e, p);
      throw DomainError("non-finite Jacobian", "field Jacobian");
    }
  }

 private:
  void check(const Vec& x, const Vec& out) const {
    if (!out.allFinite()) sym_.evaluate(x);  // throws with the offending subtree
    if (!out.allFinite()) throw DomainError("non-finite field value", "field");
  }

  VectorField sym_;
  Tape values_, jac_;
  bool has_jac_ = false;
};

// ---------------------------------------------------------------------------
// Multi-indices

class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> entries) : e_(std::move(entries)) {
    if (e_.empty()) throw Error("multi-index must be non-empty");
    if (e_.size() == 1 && e_[0] == 0) throw Error("the index (0) is excluded");
    for (int v : e_)
      if (v < 0) throw Error("multi-index entries must be non-negative");
  }
  MultiIndex(std::initializer_list<int> entries) : MultiIndex(std::vector<int>(entries)) {}

  const std::vector<int>& entries() const { return e_; }
  std::size_t size() const { return e_.size(); }
  int back() const { return e_.back(); }

  int length() const {
    int z = 0;
    for (int v : e_) z += v == 0;
    return static_cast<int>(e_.size()) + z;
  }

  MultiIndex extended(int i) const {
    auto v = e_;
    v.push_back(i);
    return MultiIndex(std::move(v));
  }

  bool is_singleton() const { return e_.size() == 1; }

  std::string to_string() const {
    std::string s = "(";
    for (std::size_t k = 0; k < e_.size(); ++k) s += (k ? "," : "") + std::to_string(e_[k]);
    return s + ")";
  }

  // Canonical order: by length, then lexicographic entries.
  friend std::strong_ordering operator<=>(const MultiIndex& a, const MultiIndex& b) {
    if (auto c = a.length() <=> b.length(); c != 0) return c;
    return a.e_ <=> b.e_;
  }
  friend bool operator==(const MultiIndex& a, const MultiIndex& b) { return a.e_ == b.e_; }

 private:
  std::vector<int> e_;
};

inline int multiindex_length(const MultiIndex& a) { return a.length(); }

// ---------------------------------------------------------------------------
// Bracket hierarchy

enum class FrameSubset { rm, rm_with_drift };

class BracketTable {
 public:
  int dim() const { return base_.front().dim(); }
  int noise_count() const { return static_cast<int>(base_.size()) - 1; }
  int level() const { return level_; }
  int max_length() const { return level_ + 2; }
  const VectorField& base(int i) const { return base_.at(i); }
  const std::vector<VectorField>& base_fields() const { return base_; }
  int drift_id() const { return 0; }

  // All stored indices, canonical order.
  const std::vector<MultiIndex>& indices() const { return indices_; }

  bool contains(const MultiIndex& a) const { return slot_.count(a.entries()) > 0; }

  int field_id(const MultiIndex& a) const {
    auto it = slot_.find(a.entries());
    if (it == slot_.end()) throw Error("multi-index " + a.to_string() + " not in table");
    return it->second;
  }

  const VectorField& operator[](const MultiIndex& a) const { return unique_[field_id(a)]; }
  const VectorField& unique_field(int id) const { return unique_[id]; }
  std::size_t unique_count() const { return unique_.size(); }

  std::vector<MultiIndex> indices_up_to(int length) const {
    std::vector<MultiIndex> r;
    for (const auto& a : indices_)
      if (a.length() <= length) r.push_back(a);
    return r;
  }

  // Indices of A_m at the table's level.
  std::vector<MultiIndex> rm_indices() const { return indices_up_to(level_); }

  // Values of every unique field at x, as columns (N x unique_count).
  Mat evaluate_unique(const Vec& x) const {
    if (x.size() != dim()) throw DimensionError("point has wrong dimension");
    int n = dim();
    std::vector<double> buf(static_cast<std::size_t>(n) * unique_.size());
    tape_->eval(x.data(), buf.data());
    Mat out = Eigen::Map<Mat>(buf.data(), n, static_cast<Eigen::Index>(unique_.size()));
    if (!out.allFinite()) {
      for (const auto& a : indices_) {
        try {
          (*this)[a].evaluate(x);
        } catch (const Error& e) {
          throw DomainError(std::string("evaluation failed for ") + a.to_string(), e.what());
        }
      }
      throw DomainError("non-finite frame value", "table");
    }
    return out;
  }

  // Frame columns for the given indices (canonical order preserved by caller).
  Mat frame(const std::vector<MultiIndex>& which, const Vec& x) const {
    Mat u = evaluate_unique(x);
    Mat f(dim(), static_cast<Eigen::Index>(which.size()));
    for (std::size_t k = 0; k < which.size(); ++k) f.col(static_cast<Eigen::Index>(k)) = u.col(field_id(which[k]));
    return f;
  }

  friend BracketTable build_hierarchy(const std::vector<VectorField>&, int, std::size_t);

 private:
  int intern(const VectorField& v) {
    auto& bucket = by_hash_[v.hash()];
    for (int id : bucket)
      if (unique_[id] == v) return id;
    unique_.push_back(v);
    bucket.push_back(static_cast<int>(unique_.size()) - 1);
    return static_cast<int>(unique_.size()) - 1;
  }

  std::vector<VectorField> base_;
  int level_ = 1;
  std::vector<MultiIndex> indices_;
  std::map<std::vector<int>, int> slot_;
  std::vector<VectorField> unique_;
  std::unordered_map<std::size_t, std::vector<int>> by_hash_;
  std::shared_ptr<const Tape> tape_;
};

// Breadth-first by length up to m+2. Structurally identical fields share storage.
inline BracketTable build_hierarchy(const std::vector<VectorField>& fields, int m,
                                    std::size_t cap = 5000) {
  if (m < 1) throw Error("build_hierarchy: level must be at least 1");
  if (fields.size() < 2) throw Error("build_hierarchy: need V0 and at least one noise field");
  for (const auto& f : fields)
    if (f.dim() != fields.front().dim()) throw DimensionError("build_hierarchy: fields differ in dimension");
  BracketTable t;
  t.base_ = fields;
  t.level_ = m;
  const int d = static_cast<int>(fields.size()) - 1;
  const int max_len = m + 2;
  std::vector<int> base_ids;
  for (const auto& f : fields) base_ids.push_back(t.intern(f));

  std::map<std::pair<int, int>, int> cache;
  auto bracket = [&](int id, int i) {
    auto key = std::make_pair(id, i);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const VectorField& a = t.unique_[id];
    int r;
    if (a.is_zero() || fields[i].is_zero())
      r = t.intern(VectorField::zero(a.dim()));
    else
      r = t.intern(lie_bracket(a, fields[i]));
    cache.emplace(key, r);
    return r;
  };

  // by_len[L] holds (entries, id) of length L; the seed (0) lives at length 2.
  std::vector<std::vector<std::pair<std::vector<int>, int>>> by_len(max_len + 1);
  std::size_t count = 0;
  for (int L = 1; L <= max_len; ++L) {
    auto& level = by_len[L];
    if (L == 1)
      for (int i = 1; i <= d; ++i) level.push_back({{i}, base_ids[i]});
    auto extend = [&](int from, bool zero) {
      if (from < 1) return;
      std::vector<std::pair<std::vector<int>, int>> parents = by_len[from];
      if (from == 2) parents.push_back({{0}, base_ids[0]});
      for (const auto& [e, id] : parents) {
        for (int i = zero ? 0 : 1; i <= (zero ? 0 : d); ++i) {
          auto ext = e;
          ext.push_back(i);
          level.push_back({ext, bracket(id, i)});
        }
      }
    };
    extend(L - 1, false);
    extend(L - 2, true);
    std::sort(level.begin(), level.end());
    count += level.size();
    if (count > cap)
      throw Error("build_hierarchy: entry cap " + std::to_string(cap) + " exceeded at length " +
                  std::to_string(L));
  }
  for (int L = 1; L <= max_len; ++L)
    for (const auto& [e, id] : by_len[L]) {
      t.indices_.emplace_back(e);
      t.slot_[e] = id;
    }
  std::vector<Expr> all;
  for (const auto& f : t.unique_)
    for (const auto& c : f.components()) all.push_back(c);
  t.tape_ = std::make_shared<const Tape>(std::span<const Expr>(all));
  return t;
}

// Frame whose span is the distribution at x: R_m in canonical order, then V0.
inline Mat evaluate_frame(const BracketTable& table, FrameSubset subset, const Vec& x) {
  auto idx = table.rm_indices();
  Mat u = table.evaluate_unique(x);
  Mat f(table.dim(), static_cast<Eigen::Index>(idx.size()) + (subset == FrameSubset::rm ? 0 : 1));
  for (std::size_t k = 0; k < idx.size(); ++k) f.col(static_cast<Eigen::Index>(k)) = u.col(table.field_id(idx[k]));
  if (subset == FrameSubset::rm_with_drift) f.col(f.cols() - 1) = u.col(table.drift_id());
  return f;
}

}  // namespace ufg
