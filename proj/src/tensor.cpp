#include "impash/tensor.hpp"

#include <cmath>

#include "impash/kernels.hpp"

namespace impash {

std::vector<double> normalize_rows(Tensor& m) {
  const std::size_t n = m.rank() == 0 ? 0 : m.rows();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = m.row(i);
    const double norm = std::sqrt(kernels::dot(r, r));
    norms[i] = norm;
    const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
    for (double& v : r) v *= inv;
  }
  return norms;
}

}  // namespace impash
