#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "impash/image.hpp"
#include "impash/nn.hpp"

namespace impash {

struct EncoderConfig {
  nn::ResidualBlock::Kind block = nn::ResidualBlock::Kind::Basic;
  int stem_channels = 16;
  int stem_kernel = 3;
  int stem_stride = 2;
  bool stem_maxpool = false;
  std::vector<int> widths{16, 32, 64};
  std::vector<int> depths{1, 1, 1};
  std::vector<int> strides{2, 2, 2};

  // Three-stage residual CNN for desk-scale runs.
  static EncoderConfig small();
  // Standard ResNet-50 trunk (bottleneck blocks 3-4-6-3, 2048-d output).
  static EncoderConfig resnet50();

  int feature_dim() const;
  void validate() const;
};

struct EncoderCache {
  nn::UnitCache stem;
  nn::MaxPoolCache pool;
  std::vector<nn::BlockCache> blocks;
  std::vector<std::size_t> pooled_shape;
};

// Image -> global-average-pooled feature vector. Resolution agnostic.
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  // x: [N, 3, H, W] -> [N, feature_dim]
  Tensor forward(const Tensor& x, nn::Mode mode, EncoderCache* cache);
  void backward(EncoderCache& cache, const Tensor& grad_features);
  void init(Rng& rng);

  int feature_dim() const { return feature_dim_; }
  const EncoderConfig& config() const { return config_; }

  void visit_params(const nn::ParamVisitor& fn);
  void visit_params(const nn::ConstParamVisitor& fn) const;
  void visit_buffers(const nn::BufferVisitor& fn);
  void visit_buffers(const nn::ConstBufferVisitor& fn) const;

 private:
  EncoderConfig config_;
  nn::ConvUnit stem_;
  std::vector<nn::ResidualBlock> blocks_;
  int feature_dim_ = 0;
};

struct ProjectorCache {
  Tensor input;
  Tensor hidden;
  Tensor output;  // unit-norm rows
  std::vector<double> norms;
};

// Linear -> ReLU -> Linear, followed by row-wise L2 normalization.
class Projector {
 public:
  Projector() = default;
  Projector(const std::string& name, int in_features, int hidden, int out_features);

  Tensor forward(const Tensor& features, ProjectorCache* cache) const;
  // Returns dL/dfeatures.
  Tensor backward(const ProjectorCache& cache, const Tensor& grad_out);
  void init(Rng& rng);

  int out_features() const { return fc2.out_features(); }

  void visit_params(const nn::ParamVisitor& fn);
  void visit_params(const nn::ConstParamVisitor& fn) const;

  nn::Linear fc1;
  nn::Linear fc2;
};

// Per-channel input standardization applied when images become tensors.
struct InputNorm {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

// Interleaved HWC images of identical size -> normalized [N, 3, H, W].
Tensor images_to_batch(std::span<const Image> images, const InputNorm& norm);

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::small();
  int projection_dim = 128;
  InputNorm input_norm;
};

// Query branch: encoder g with projectors p1 (InfoMin views) and p2
// (PatchShuffling views).
struct ModelBundle {
  ModelConfig config;
  Encoder encoder;
  Projector p1;
  Projector p2;

  ModelBundle() = default;
  explicit ModelBundle(const ModelConfig& cfg);
  void init(std::uint64_t seed);

  enum class View { V1, V2, V3, V4 };
  // Both view families run through the one encoder instance.
  Encoder& encoder_for(View) { return encoder; }
  Projector& projector_for(View v) { return (v == View::V1 || v == View::V2) ? p1 : p2; }

  void visit_params(const nn::ParamVisitor& fn);
  void visit_params(const nn::ConstParamVisitor& fn) const;
  void visit_buffers(const nn::BufferVisitor& fn);
  void visit_buffers(const nn::ConstBufferVisitor& fn) const;
  void zero_grad();
  std::size_t parameter_count() const;
};

struct MomentumBundle {
  ModelBundle branch;
  double alpha = 0.9999;
};

struct QueryForward {
  Tensor q1;
  Tensor q2;
  EncoderCache enc1;
  EncoderCache enc3;
  ProjectorCache proj1;
  ProjectorCache proj3;
};

// q1 = p1(g(v1)), q2 = p2(g(v3)); both row-normalized. Caches are kept for
// backward_query.
QueryForward forward_query(ModelBundle& bundle, const Tensor& v1, const Tensor& v3);
void backward_query(ModelBundle& bundle, QueryForward& forward, const Tensor& grad_q1,
                    const Tensor& grad_q2);

// k1 = p1m(g_m(v2)), k2 = p2m(g_m(v4)); no caches, no gradients.
std::pair<Tensor, Tensor> forward_momentum(MomentumBundle& momentum, const Tensor& v2, const Tensor& v4);

// Projected, normalized features in inference mode (running batch-norm
// statistics), through g and p1.
Tensor embed(ModelBundle& bundle, const Tensor& images);

MomentumBundle init_momentum(const ModelBundle& bundle, double alpha);

// theta_m <- alpha * theta_m + (1 - alpha) * theta_q over all parameters.
void momentum_update(MomentumBundle& momentum, const ModelBundle& bundle);

}  // namespace impash
