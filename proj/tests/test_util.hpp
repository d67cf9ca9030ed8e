#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dfr/matrix.hpp"
#include "dfr/rng.hpp"

namespace dfr::test {

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * standard_normal(rng);
  return m;
}

// Central difference of f with respect to x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

}  // namespace dfr::test
