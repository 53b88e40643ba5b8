#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace impash {

// Row-major dense double array with an explicit shape. Activations are NCHW,
// embeddings and weights are 2-D (rows x cols).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
      : shape(std::move(dims)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (const auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const {
    if (rank() < 2) return rank() == 1 ? 1 : 0;
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
  }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool operator==(const Tensor&) const = default;

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& dims,
                          const char* what) {
  if (t.shape != dims) {
    Tensor expect;
    expect.shape = dims;
    throw std::invalid_argument(std::string(what) + ": expected shape " +
                                expect.shape_string() + ", got " + t.shape_string());
  }
}

// Row-wise L2 normalization; returns the pre-normalization norms.
std::vector<double> normalize_rows(Tensor& m);

}  // namespace impash
