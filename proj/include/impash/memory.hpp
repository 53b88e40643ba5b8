#pragma once

#include <cstdint>
#include <vector>

#include "impash/tensor.hpp"

namespace impash {

// Fixed-capacity ring buffer of unit-norm negative keys.
class FeatureQueue {
 public:
  FeatureQueue() = default;

  // Capacity K rows of `dim` columns, filled with random unit vectors.
  static FeatureQueue create(std::size_t capacity, std::uint64_t seed, std::size_t dim = 128);
  // Rebuilds a queue from serialized state.
  static FeatureQueue restore(Tensor buffer, std::size_t write_ptr, std::size_t fill_count);

  // Overwrites rows write_ptr .. write_ptr + B - 1 (mod K), oldest first.
  void enqueue(const Tensor& batch);

  // Copy of the K x dim buffer in storage order.
  Tensor snapshot() const { return buffer_; }
  // Rows from oldest to newest.
  Tensor ordered_rows() const;

  std::size_t capacity() const { return buffer_.rank() ? buffer_.rows() : 0; }
  std::size_t dim() const { return buffer_.rank() ? buffer_.cols() : 0; }
  std::size_t write_ptr() const { return write_ptr_; }
  // Number of rows written by enqueue, saturating at capacity.
  std::size_t fill_count() const { return fill_count_; }
  const Tensor& buffer() const { return buffer_; }

 private:
  Tensor buffer_;
  std::size_t write_ptr_ = 0;
  std::size_t fill_count_ = 0;
};

inline constexpr double kUnitNormTolerance = 1e-6;

// Throws std::invalid_argument naming `what` when a row deviates from unit norm.
void require_unit_rows(const Tensor& m, const char* what, double tolerance = kUnitNormTolerance);

}  // namespace impash
