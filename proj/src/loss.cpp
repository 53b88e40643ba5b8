#include "impash/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "impash/kernels.hpp"
#include "impash/memory.hpp"

namespace impash {

NceResult info_nce_with_grad(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (q.rank() != 2 || !q.same_shape(k_pos)) {
    throw std::invalid_argument("info_nce: queries " + q.shape_string() + " and positives " + k_pos.shape_string() +
                                " must have equal shapes");
  }
  if (negatives.rank() != 2 || negatives.cols() != q.cols()) {
    throw std::invalid_argument("info_nce: negatives " + negatives.shape_string() + " do not match dimension");
  }
  require_unit_rows(q, "info_nce queries");
  require_unit_rows(k_pos, "info_nce positives");
  require_unit_rows(negatives, "info_nce negatives");

  const std::size_t b = q.rows(), d = q.cols(), k = negatives.rows();
  NceResult result;
  result.grad_q = Tensor({b, d});
  if (b == 0) return result;
  std::vector<double> logits(k + 1);
  // Running mean, exact when every sample contributes the same value.
  double mean = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto qi = q.row(i);
    logits[0] = kernels::dot(qi, k_pos.row(i)) / tau;
    for (std::size_t j = 0; j < k; ++j) logits[j + 1] = kernels::dot(qi, negatives.row(j)) / tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (const double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);
    mean += ((lse - logits[0]) - mean) / static_cast<double>(i + 1);

    // dL_i/dq_i = ((p_0 - 1) k_i + sum_j p_j n_j) / tau, then / B for the mean.
    auto g = result.grad_q.row(i);
    const double scale = 1.0 / (tau * static_cast<double>(b));
    kernels::axpy((std::exp(logits[0] - lse) - 1.0) * scale, k_pos.row(i), g);
    for (std::size_t j = 0; j < k; ++j) kernels::axpy(std::exp(logits[j + 1] - lse) * scale, negatives.row(j), g);
  }
  result.loss = mean;
  return result;
}

double info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, double tau) {
  return info_nce_with_grad(q, k_pos, negatives, tau).loss;
}

ImpashLoss impash_loss(const Tensor& q1, const Tensor& q2, const Tensor& k1_pos, const Tensor& k2_pos,
                       const Tensor& negatives1, const Tensor& negatives2, double tau) {
  const NceResult t11 = info_nce_with_grad(q1, k1_pos, negatives1, tau);
  const NceResult t12 = info_nce_with_grad(q1, k2_pos, negatives2, tau);
  const NceResult t21 = info_nce_with_grad(q2, k1_pos, negatives1, tau);
  const NceResult t22 = info_nce_with_grad(q2, k2_pos, negatives2, tau);

  ImpashLoss out;
  out.value.terms = {t11.loss, t12.loss, t21.loss, t22.loss};
  out.value.total = t11.loss + t12.loss + t21.loss + t22.loss;
  out.grad_q1 = t11.grad_q;
  kernels::axpy(1.0, t12.grad_q.data, out.grad_q1.data);
  out.grad_q2 = t21.grad_q;
  kernels::axpy(1.0, t22.grad_q.data, out.grad_q2.data);
  return out;
}

CrossEntropyResult cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits " + logits.shape_string() + " do not match " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.rows(), c = logits.cols();
  CrossEntropyResult result;
  result.grad_logits = Tensor({n, c});
  if (n == 0) return result;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (const double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    mean += ((lse - row[static_cast<std::size_t>(y)]) - mean) / static_cast<double>(i + 1);
    auto g = result.grad_logits.row(i);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - lse) / static_cast<double>(n);
    g[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(n);
  }
  result.loss = mean;
  return result;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy_with_grad(logits, labels).loss;
}

}  // namespace impash
