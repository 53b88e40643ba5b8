#include "impash/memory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "impash/kernels.hpp"
#include "impash/rng.hpp"

namespace impash {

void require_unit_rows(const Tensor& m, const char* what, double tolerance) {
  if (m.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + m.shape_string());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    const double norm = std::sqrt(kernels::dot(r, r));
    if (!(std::abs(norm - 1.0) <= tolerance)) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                                  std::to_string(norm) + ", expected 1");
    }
  }
}

FeatureQueue FeatureQueue::create(std::size_t capacity, std::uint64_t seed, std::size_t dim) {
  if (capacity == 0) throw std::invalid_argument("feature queue capacity must be >= 1");
  if (dim == 0) throw std::invalid_argument("feature queue dimension must be >= 1");
  FeatureQueue q;
  q.buffer_ = Tensor({capacity, dim});
  Rng rng(seed);
  for (double& v : q.buffer_.data) v = rng.normal();
  normalize_rows(q.buffer_);
  return q;
}

FeatureQueue FeatureQueue::restore(Tensor buffer, std::size_t write_ptr, std::size_t fill_count) {
  if (buffer.rank() != 2 || buffer.rows() == 0) throw std::invalid_argument("feature queue: bad buffer shape");
  if (write_ptr >= buffer.rows() || fill_count > buffer.rows()) {
    throw std::invalid_argument("feature queue: pointer out of range");
  }
  FeatureQueue q;
  q.buffer_ = std::move(buffer);
  q.write_ptr_ = write_ptr;
  q.fill_count_ = fill_count;
  return q;
}

void FeatureQueue::enqueue(const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != dim()) {
    throw std::invalid_argument("enqueue: expected [B, " + std::to_string(dim()) + "], got " + batch.shape_string());
  }
  const std::size_t b = batch.rows(), k = capacity();
  if (b > k) {
    throw std::invalid_argument("enqueue: batch of " + std::to_string(b) + " exceeds queue capacity " + std::to_string(k));
  }
  require_unit_rows(batch, "enqueue");
  for (std::size_t i = 0; i < b; ++i) {
    const auto src = batch.row(i);
    std::copy(src.begin(), src.end(), buffer_.row((write_ptr_ + i) % k).begin());
  }
  write_ptr_ = (write_ptr_ + b) % k;
  fill_count_ = std::min(k, fill_count_ + b);
}

Tensor FeatureQueue::ordered_rows() const {
  Tensor out(buffer_.shape);
  const std::size_t k = capacity();
  for (std::size_t i = 0; i < k; ++i) {
    const auto src = buffer_.row((write_ptr_ + i) % k);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace impash
