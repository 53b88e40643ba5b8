#pragma once

// Minimal CNN building blocks with explicit forward/backward passes. Each
// forward optionally fills a cache that the matching backward consumes, so the
// same layer can serve several independent forward passes before a single
// backward (the query encoder sees two views per step).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "impash/rng.hpp"
#include "impash/tensor.hpp"

namespace impash::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

enum class Mode { Train, Eval };

using ParamVisitor = std::function<void(Param&)>;
using ConstParamVisitor = std::function<void(const Param&)>;
using BufferVisitor = std::function<void(const std::string&, std::vector<double>&)>;
using ConstBufferVisitor = std::function<void(const std::string&, const std::vector<double>&)>;

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding);

  // x: [N, C, H, W]. `saved` receives a copy of the input for backward.
  Tensor forward(const Tensor& x, Tensor* saved) const;
  // Accumulates the weight gradient; returns dL/dx (empty when !input_grad).
  Tensor backward(const Tensor& saved_input, const Tensor& grad_out, bool input_grad = true);

  void init(Rng& rng);
  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }
  int out_channels() const { return out_; }

  Param weight;  // [out, in * k * k]

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, padding_ = 0;
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  // Train: normalizes with batch statistics and updates running statistics.
  // Eval: uses running statistics.
  Tensor forward(const Tensor& x, Mode mode, BatchNormCache* cache);
  Tensor backward(const BatchNormCache& cache, const Tensor& grad_out);

  Param gamma;
  Param beta;
  std::string name;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

void relu_inplace(Tensor& x);
// Gradient of ReLU given its output.
void relu_backward_inplace(const Tensor& out, Tensor& grad);

struct MaxPoolCache {
  std::vector<std::size_t> argmax;
  std::vector<std::size_t> input_shape;
};

// 3x3, stride 2, padding 1.
Tensor maxpool3x3s2(const Tensor& x, MaxPoolCache* cache);
Tensor maxpool3x3s2_backward(const MaxPoolCache& cache, const Tensor& grad_out);

// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape, const Tensor& grad_out);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  // x: [N, in] -> [N, out]
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& input, const Tensor& grad_out);
  void init(Rng& rng);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Param weight;  // [out, in]
  Param bias;    // [out]

 private:
  int in_ = 0, out_ = 0;
};

// conv -> batch norm -> optional ReLU
struct UnitCache {
  Tensor input;
  BatchNormCache bn;
  Tensor output;
};

class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
           int padding, bool relu);

  Tensor forward(const Tensor& x, Mode mode, UnitCache* cache);
  Tensor backward(UnitCache& cache, Tensor grad_out, bool input_grad = true);
  void init(Rng& rng) { conv.init(rng); }

  void visit_params(const ParamVisitor& fn);
  void visit_params(const ConstParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  void visit_buffers(const ConstBufferVisitor& fn) const;

  Conv2d conv;
  BatchNorm2d bn;
  bool relu = true;
};

struct BlockCache {
  std::vector<UnitCache> units;
  std::optional<UnitCache> shortcut;
  Tensor output;
};

// relu(main(x) + shortcut(x)); main is a chain of ConvUnits whose last unit
// has no ReLU, shortcut is identity or a 1x1 projection.
class ResidualBlock {
 public:
  enum class Kind { Basic, Bottleneck };
  static constexpr int kBottleneckExpansion = 4;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, Kind kind, int in_channels, int width, int stride);

  Tensor forward(const Tensor& x, Mode mode, BlockCache* cache);
  Tensor backward(BlockCache& cache, const Tensor& grad_out);
  void init(Rng& rng);
  int out_channels() const { return out_channels_; }

  void visit_params(const ParamVisitor& fn);
  void visit_params(const ConstParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  void visit_buffers(const ConstBufferVisitor& fn) const;

 private:
  std::vector<ConvUnit> units_;
  std::optional<ConvUnit> shortcut_;
  int out_channels_ = 0;
};

}  // namespace impash::nn
