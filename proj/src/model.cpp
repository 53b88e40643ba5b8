#include "impash/model.hpp"

#include <cmath>
#include <stdexcept>

#include "impash/kernels.hpp"

namespace impash {

EncoderConfig EncoderConfig::small() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::resnet50() {
  EncoderConfig c;
  c.block = nn::ResidualBlock::Kind::Bottleneck;
  c.stem_channels = 64;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.stem_maxpool = true;
  c.widths = {64, 128, 256, 512};
  c.depths = {3, 4, 6, 3};
  c.strides = {1, 2, 2, 2};
  return c;
}

void EncoderConfig::validate() const {
  if (stem_channels < 1 || stem_kernel < 1 || stem_stride < 1) throw std::invalid_argument("encoder: bad stem");
  if (widths.size() != depths.size() || widths.size() != strides.size()) {
    throw std::invalid_argument("encoder: widths, depths and strides must have equal length");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1 || depths[i] < 1 || strides[i] < 1) throw std::invalid_argument("encoder: bad stage");
  }
}

int EncoderConfig::feature_dim() const {
  if (widths.empty()) return stem_channels;
  const int expansion = block == nn::ResidualBlock::Kind::Bottleneck ? nn::ResidualBlock::kBottleneckExpansion : 1;
  return widths.back() * expansion;
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config)
    : config_(config),
      stem_("g.stem", 3, config.stem_channels, config.stem_kernel, config.stem_stride, config.stem_kernel / 2, true) {
  config.validate();
  int channels = config.stem_channels;
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    for (int b = 0; b < config.depths[s]; ++b) {
      const std::string name = "g.stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      blocks_.emplace_back(name, config.block, channels, config.widths[s], b == 0 ? config.strides[s] : 1);
      channels = blocks_.back().out_channels();
    }
  }
  feature_dim_ = channels;
}

void Encoder::init(Rng& rng) {
  stem_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

Tensor Encoder::forward(const Tensor& x, nn::Mode mode, EncoderCache* cache) {
  if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("encoder: expected [N, 3, H, W], got " + x.shape_string());
  Tensor h = stem_.forward(x, mode, cache ? &cache->stem : nullptr);
  if (config_.stem_maxpool) h = nn::maxpool3x3s2(h, cache ? &cache->pool : nullptr);
  if (cache) cache->blocks.assign(blocks_.size(), nn::BlockCache{});
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward(h, mode, cache ? &cache->blocks[i] : nullptr);
  if (cache) cache->pooled_shape = h.shape;
  return nn::global_avg_pool(h);
}

void Encoder::backward(EncoderCache& cache, const Tensor& grad_features) {
  Tensor g = nn::global_avg_pool_backward(cache.pooled_shape, grad_features);
  for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(cache.blocks[i], g);
  if (config_.stem_maxpool) g = nn::maxpool3x3s2_backward(cache.pool, g);
  stem_.backward(cache.stem, std::move(g), false);
}

void Encoder::visit_params(const nn::ParamVisitor& fn) {
  stem_.visit_params(fn);
  for (auto& b : blocks_) b.visit_params(fn);
}

void Encoder::visit_params(const nn::ConstParamVisitor& fn) const {
  stem_.visit_params(fn);
  for (const auto& b : blocks_) b.visit_params(fn);
}

void Encoder::visit_buffers(const nn::BufferVisitor& fn) {
  stem_.visit_buffers(fn);
  for (auto& b : blocks_) b.visit_buffers(fn);
}

void Encoder::visit_buffers(const nn::ConstBufferVisitor& fn) const {
  stem_.visit_buffers(fn);
  for (const auto& b : blocks_) b.visit_buffers(fn);
}

// ---------------------------------------------------------------------------

Projector::Projector(const std::string& name, int in_features, int hidden, int out_features)
    : fc1(name + ".fc1", in_features, hidden), fc2(name + ".fc2", hidden, out_features) {}

void Projector::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

Tensor Projector::forward(const Tensor& features, ProjectorCache* cache) const {
  Tensor h = fc1.forward(features);
  nn::relu_inplace(h);
  Tensor y = fc2.forward(h);
  std::vector<double> norms = normalize_rows(y);
  if (cache) {
    cache->input = features;
    cache->hidden = std::move(h);
    cache->output = y;
    cache->norms = std::move(norms);
  }
  return y;
}

Tensor Projector::backward(const ProjectorCache& cache, const Tensor& grad_out) {
  require_shape(grad_out, cache.output.shape, "projector backward");
  // d(y/|y|)/dy applied row-wise.
  Tensor gy(grad_out.shape);
  const std::size_t n = grad_out.rows(), d = grad_out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = cache.output.row(i);
    const auto g = grad_out.row(i);
    const double proj = kernels::dot(u, g);
    for (std::size_t j = 0; j < d; ++j) gy.at(i, j) = (g[j] - u[j] * proj) / cache.norms[i];
  }
  Tensor gh = fc2.backward(cache.hidden, gy);
  nn::relu_backward_inplace(cache.hidden, gh);
  return fc1.backward(cache.input, gh);
}

void Projector::visit_params(const nn::ParamVisitor& fn) {
  fn(fc1.weight);
  fn(fc1.bias);
  fn(fc2.weight);
  fn(fc2.bias);
}

void Projector::visit_params(const nn::ConstParamVisitor& fn) const {
  fn(fc1.weight);
  fn(fc1.bias);
  fn(fc2.weight);
  fn(fc2.bias);
}

// ---------------------------------------------------------------------------

Tensor images_to_batch(std::span<const Image> images, const InputNorm& norm) {
  if (images.empty()) return Tensor({0, 3, 0, 0});
  const int h = images[0].height, w = images[0].width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor batch({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != h || img.width != w) throw std::invalid_argument("images_to_batch: images differ in size");
    for (int c = 0; c < 3; ++c) {
      double* dst = batch.data.data() + (n * 3 + static_cast<std::size_t>(c)) * plane;
      const double inv = 1.0 / norm.std[static_cast<std::size_t>(c)];
      const double mean = norm.mean[static_cast<std::size_t>(c)];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = (img.pixels[p * 3 + static_cast<std::size_t>(c)] - mean) * inv;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------

ModelBundle::ModelBundle(const ModelConfig& cfg) : config(cfg), encoder(cfg.encoder) {
  const int d = encoder.feature_dim();
  p1 = Projector("p1", d, d, cfg.projection_dim);
  p2 = Projector("p2", d, d, cfg.projection_dim);
}

void ModelBundle::init(std::uint64_t seed) {
  Rng g_rng(derive_seed(seed, "encoder"));
  encoder.init(g_rng);
  Rng p1_rng(derive_seed(seed, "p1"));
  p1.init(p1_rng);
  Rng p2_rng(derive_seed(seed, "p2"));
  p2.init(p2_rng);
}

void ModelBundle::visit_params(const nn::ParamVisitor& fn) {
  encoder.visit_params(fn);
  p1.visit_params(fn);
  p2.visit_params(fn);
}

void ModelBundle::visit_params(const nn::ConstParamVisitor& fn) const {
  encoder.visit_params(fn);
  p1.visit_params(fn);
  p2.visit_params(fn);
}

void ModelBundle::visit_buffers(const nn::BufferVisitor& fn) { encoder.visit_buffers(fn); }
void ModelBundle::visit_buffers(const nn::ConstBufferVisitor& fn) const { encoder.visit_buffers(fn); }

void ModelBundle::zero_grad() {
  visit_params([](nn::Param& p) { std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0); });
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  visit_params([&](const nn::Param& p) { n += p.value.size(); });
  return n;
}

QueryForward forward_query(ModelBundle& bundle, const Tensor& v1, const Tensor& v3) {
  if (v1.rank() != 4 || v3.rank() != 4 || v1.dim(0) != v3.dim(0)) {
    throw std::invalid_argument("forward_query: v1 and v3 must be NCHW batches of equal size, got " +
                                v1.shape_string() + " and " + v3.shape_string());
  }
  using View = ModelBundle::View;
  QueryForward out;
  const Tensor f1 = bundle.encoder_for(View::V1).forward(v1, nn::Mode::Train, &out.enc1);
  const Tensor f3 = bundle.encoder_for(View::V3).forward(v3, nn::Mode::Train, &out.enc3);
  out.q1 = bundle.projector_for(View::V1).forward(f1, &out.proj1);
  out.q2 = bundle.projector_for(View::V3).forward(f3, &out.proj3);
  return out;
}

void backward_query(ModelBundle& bundle, QueryForward& forward, const Tensor& grad_q1, const Tensor& grad_q2) {
  using View = ModelBundle::View;
  const Tensor gf1 = bundle.projector_for(View::V1).backward(forward.proj1, grad_q1);
  const Tensor gf3 = bundle.projector_for(View::V3).backward(forward.proj3, grad_q2);
  bundle.encoder_for(View::V1).backward(forward.enc1, gf1);
  bundle.encoder_for(View::V3).backward(forward.enc3, gf3);
}

std::pair<Tensor, Tensor> forward_momentum(MomentumBundle& momentum, const Tensor& v2, const Tensor& v4) {
  if (v2.rank() != 4 || v4.rank() != 4 || v2.dim(0) != v4.dim(0)) {
    throw std::invalid_argument("forward_momentum: v2 and v4 must be NCHW batches of equal size, got " +
                                v2.shape_string() + " and " + v4.shape_string());
  }
  using View = ModelBundle::View;
  ModelBundle& m = momentum.branch;
  const Tensor f2 = m.encoder_for(View::V2).forward(v2, nn::Mode::Train, nullptr);
  const Tensor f4 = m.encoder_for(View::V4).forward(v4, nn::Mode::Train, nullptr);
  return {m.projector_for(View::V2).forward(f2, nullptr), m.projector_for(View::V4).forward(f4, nullptr)};
}

Tensor embed(ModelBundle& bundle, const Tensor& images) {
  return bundle.p1.forward(bundle.encoder.forward(images, nn::Mode::Eval, nullptr), nullptr);
}

MomentumBundle init_momentum(const ModelBundle& bundle, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("momentum coefficient must lie in [0, 1]");
  MomentumBundle m{bundle, alpha};
  m.branch.zero_grad();
  return m;
}

void momentum_update(MomentumBundle& momentum, const ModelBundle& bundle) {
  std::vector<const nn::Param*> query;
  bundle.visit_params([&](const nn::Param& p) { query.push_back(&p); });
  std::size_t i = 0;
  momentum.branch.visit_params([&](nn::Param& p) {
    if (i >= query.size() || !p.value.same_shape(query[i]->value)) {
      throw std::invalid_argument("momentum_update: architecture mismatch at " + p.name);
    }
    kernels::blend(momentum.alpha, p.value.data, query[i]->value.data);
    ++i;
  });
  if (i != query.size()) throw std::invalid_argument("momentum_update: parameter count mismatch");
}

}  // namespace impash
