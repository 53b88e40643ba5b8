#pragma once

#include <array>
#include <span>
#include <string_view>

#include "impash/tensor.hpp"

namespace impash {

struct NceResult {
  double loss = 0.0;
  // dL/dq; keys and negatives are treated as constants.
  Tensor grad_q;
};

// Mean over the batch of -log softmax of the positive logit q_i.k_i/tau
// against [k_i, negatives...]. All rows must be unit norm.
NceResult info_nce_with_grad(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, double tau);
double info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, double tau);

struct LossValue {
  static constexpr std::array<std::string_view, 4> kTermNames{"q1k1", "q1k2", "q2k1", "q2k2"};

  double total = 0.0;
  std::array<double, 4> terms{};
};

struct ImpashLoss {
  LossValue value;
  Tensor grad_q1;
  Tensor grad_q2;
};

// Sum of the four query/key pairings. k1 pairs with the InfoMin queue
// (negatives1), k2 with the PatchShuffling queue (negatives2).
ImpashLoss impash_loss(const Tensor& q1, const Tensor& q2, const Tensor& k1_pos, const Tensor& k2_pos,
                       const Tensor& negatives1, const Tensor& negatives2, double tau);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad_logits;
};

CrossEntropyResult cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels);
double cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace impash
