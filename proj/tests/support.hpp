#pragma once

#include <random>
#include <vector>

#include "ufg/ufg.hpp"

namespace ufg::test {

inline std::vector<Vec> points_in(const CatalogEntry& e, std::size_t n, std::uint64_t seed = 7) {
  return catalog::detail::random_points(e.sample_box, n, seed);
}

inline double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Central-difference Jacobian, columns = partial derivatives.
template <class F>
Mat fd_jacobian(F&& f, const Vec& x, double h = 1e-5) {
  Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

// All catalog entries with default parameters.
inline std::vector<CatalogEntry> all_entries() {
  std::vector<CatalogEntry> out;
  for (const auto& n : catalog::list()) out.push_back(catalog::get(n));
  return out;
}

}  // namespace ufg::test
