#include "impash/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "impash/kernels.hpp"

namespace impash::nn {

namespace {

void require_rank4(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected NCHW input, got " + x.shape_string());
}

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile)
    for (std::size_t c0 = 0; c0 < cols; c0 += tile)
      for (std::size_t r = r0; r < std::min(rows, r0 + tile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + tile); ++c) dst[c * rows + r] = src[r * cols + c];
}

void im2col(const double* x, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, double* col) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        double* dst = col + (static_cast<std::size_t>(c * kernel + ky) * kernel + kx) * plane;
        const double* src = x + static_cast<std::size_t>(c) * height * width;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          double* drow = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(drow, drow + out_w, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            drow[ox] = (ix >= 0 && ix < width) ? srow[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, int channels, int height, int width, int kernel, int stride,
                int padding, int out_h, int out_w, double* x) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const double* src = col + (static_cast<std::size_t>(c * kernel + ky) * kernel + kx) * plane;
        double* dst = x + static_cast<std::size_t>(c) * height * width;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) continue;
          const double* srow = src + static_cast<std::size_t>(oy) * out_w;
          double* drow = dst + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < width) drow[ix] += srow[ox];
          }
        }
      }
}

}  // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
               int padding)
    : weight(name + ".weight",
             {static_cast<std::size_t>(out_channels),
              static_cast<std::size_t>(in_channels) * kernel * kernel}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {}

void Conv2d::init(Rng& rng) {
  // He initialization, fan-out mode.
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(out_) * kernel_ * kernel_));
  for (double& w : weight.value.data) w = std_dev * rng.normal();
}

Tensor Conv2d::forward(const Tensor& x, Tensor* saved) const {
  require_rank4(x, "conv2d");
  if (static_cast<int>(x.dim(1)) != in_) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(in_) + " input channels, got " + x.shape_string());
  }
  const int n = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int oh = out_size(h), ow = out_size(w);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: input too small " + x.shape_string());
  Tensor y({static_cast<std::size_t>(n), static_cast<std::size_t>(out_), static_cast<std::size_t>(oh),
            static_cast<std::size_t>(ow)});
  const std::size_t ckk = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t in_stride = static_cast<std::size_t>(in_) * h * w;
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  std::vector<double> col(direct ? 0 : ckk * plane);
  for (int i = 0; i < n; ++i) {
    const double* xs = x.data.data() + i * in_stride;
    const double* b = xs;
    if (!direct) {
      im2col(xs, in_, h, w, kernel_, stride_, padding_, oh, ow, col.data());
      b = col.data();
    }
    kernels::gemm(static_cast<std::size_t>(out_), plane, ckk, weight.value.data.data(), ckk, b, plane,
                  y.data.data() + static_cast<std::size_t>(i) * out_ * plane, plane, false);
  }
  if (saved) *saved = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& input, const Tensor& grad_out, bool input_grad) {
  const int n = static_cast<int>(input.dim(0)), h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const int oh = out_size(h), ow = out_size(w);
  require_shape(grad_out, {static_cast<std::size_t>(n), static_cast<std::size_t>(out_), static_cast<std::size_t>(oh),
                           static_cast<std::size_t>(ow)},
                "conv2d backward");
  const std::size_t ckk = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t in_stride = static_cast<std::size_t>(in_) * h * w;
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;

  std::vector<double> weight_t(ckk * out_);
  transpose(weight.value.data.data(), static_cast<std::size_t>(out_), ckk, weight_t.data());

  Tensor dx(input_grad ? input.shape : std::vector<std::size_t>{});
  std::vector<double> col(ckk * plane);
  std::vector<double> col_t(ckk * plane);
  std::vector<double> dcol(direct ? 0 : ckk * plane);
  for (int i = 0; i < n; ++i) {
    const double* xs = input.data.data() + i * in_stride;
    const double* gy = grad_out.data.data() + static_cast<std::size_t>(i) * out_ * plane;
    if (direct) {
      std::copy(xs, xs + ckk * plane, col.data());
    } else {
      im2col(xs, in_, h, w, kernel_, stride_, padding_, oh, ow, col.data());
    }
    transpose(col.data(), ckk, plane, col_t.data());
    // dW[out x ckk] += dY[out x plane] * col^T[plane x ckk]
    kernels::gemm(static_cast<std::size_t>(out_), ckk, plane, gy, plane, col_t.data(), ckk,
                  weight.grad.data.data(), ckk, true);
    if (!input_grad) continue;
    // dcol[ckk x plane] = W^T[ckk x out] * dY[out x plane]
    double* dxs = dx.data.data() + i * in_stride;
    if (direct) {
      kernels::gemm(ckk, plane, static_cast<std::size_t>(out_), weight_t.data(), static_cast<std::size_t>(out_), gy,
                    plane, dxs, plane, false);
    } else {
      kernels::gemm(ckk, plane, static_cast<std::size_t>(out_), weight_t.data(), static_cast<std::size_t>(out_), gy,
                    plane, dcol.data(), plane, false);
      col2im_add(dcol.data(), in_, h, w, kernel_, stride_, padding_, oh, ow, dxs);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& n, int channels)
    : gamma(n + ".gamma", {static_cast<std::size_t>(channels)}),
      beta(n + ".beta", {static_cast<std::size_t>(channels)}),
      name(n),
      running_mean(static_cast<std::size_t>(channels), 0.0),
      running_var(static_cast<std::size_t>(channels), 1.0) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, BatchNormCache* cache) {
  require_rank4(x, "batchnorm");
  if (cache && mode != Mode::Train) throw std::logic_error("batchnorm: backward cache requires train mode");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (c != gamma.value.size()) throw std::invalid_argument("batchnorm: channel mismatch " + x.shape_string());
  Tensor y(x.shape);
  if (cache) {
    cache->xhat = Tensor(x.shape);
    cache->inv_std.assign(c, 0.0);
  }
  const double m = static_cast<double>(n * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      mean = s / m;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (p[j] - mean) * (p[j] - mean);
      }
      var = ss / m;
      const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    const double g = gamma.value[ch], b = beta.value[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      const double* p = x.data.data() + off;
      double* q = y.data.data() + off;
      if (cache) {
        double* h = cache->xhat.data.data() + off;
        for (std::size_t j = 0; j < plane; ++j) {
          h[j] = (p[j] - mean) * is;
          q[j] = h[j] * g + b;
        }
      } else {
        for (std::size_t j = 0; j < plane; ++j) q[j] = (p[j] - mean) * is * g + b;
      }
    }
    if (cache) cache->inv_std[ch] = is;
  }
  return y;
}

Tensor BatchNorm2d::backward(const BatchNormCache& cache, const Tensor& grad_out) {
  if (!grad_out.same_shape(cache.xhat)) throw std::invalid_argument("batchnorm backward: shape mismatch");
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor dx(grad_out.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* gy = grad_out.data.data() + (i * c + ch) * plane;
      const double* xh = cache.xhat.data.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += gy[j];
        sum_dy_xhat += gy[j] * xh[j];
      }
    }
    gamma.grad[ch] += sum_dy_xhat;
    beta.grad[ch] += sum_dy;
    const double scale = gamma.value[ch] * cache.inv_std[ch] / m;
    for (std::size_t i = 0; i < n; ++i) {
      const double* gy = grad_out.data.data() + (i * c + ch) * plane;
      const double* xh = cache.xhat.data.data() + (i * c + ch) * plane;
      double* gx = dx.data.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) gx[j] = scale * (m * gy[j] - sum_dy - xh[j] * sum_dy_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

void relu_inplace(Tensor& x) {
  for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& out, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(out[i] > 0.0)) grad[i] = 0.0;
  }
}

Tensor maxpool3x3s2(const Tensor& x, MaxPoolCache* cache) {
  require_rank4(x, "maxpool");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  const int oh = (h + 2 - 3) / 2 + 1, ow = (w + 2 - 3) / 2 + 1;
  Tensor y({n, c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  if (cache) {
    cache->argmax.assign(y.size(), 0);
    cache->input_shape = x.shape;
  }
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.data.data() + p * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = src[iy * w + ix];
            if (v > best) {
              best = v;
              best_idx = p * h * w + static_cast<std::size_t>(iy) * w + ix;
            }
          }
        }
        y[o] = best;
        if (cache) cache->argmax[o] = best_idx;
      }
  }
  return y;
}

Tensor maxpool3x3s2_backward(const MaxPoolCache& cache, const Tensor& grad_out) {
  Tensor dx(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[cache.argmax[o]] += grad_out[o];
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    const double* src = x.data.data() + p * plane;
    for (std::size_t j = 0; j < plane; ++j) s += src[j];
    y[p] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape, const Tensor& grad_out) {
  Tensor dx(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    const double g = grad_out[p] / static_cast<double>(plane);
    std::fill(dx.data.begin() + static_cast<std::ptrdiff_t>(p * plane),
              dx.data.begin() + static_cast<std::ptrdiff_t>((p + 1) * plane), g);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)}),
      bias(name + ".bias", {static_cast<std::size_t>(out_features)}),
      in_(in_features),
      out_(out_features) {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  for (double& v : weight.value.data) v = rng.uniform(-bound, bound);
  for (double& v : bias.value.data) v = rng.uniform(-bound, bound);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || static_cast<int>(x.dim(1)) != in_) {
    throw std::invalid_argument("linear: expected [N, " + std::to_string(in_) + "], got " + x.shape_string());
  }
  const std::size_t n = x.dim(0);
  std::vector<double> wt(static_cast<std::size_t>(in_) * out_);
  transpose(weight.value.data.data(), static_cast<std::size_t>(out_), static_cast<std::size_t>(in_), wt.data());
  Tensor y({n, static_cast<std::size_t>(out_)});
  for (std::size_t i = 0; i < n; ++i) std::copy(bias.value.data.begin(), bias.value.data.end(), y.row(i).begin());
  kernels::gemm(n, static_cast<std::size_t>(out_), static_cast<std::size_t>(in_), x.data.data(),
                static_cast<std::size_t>(in_), wt.data(), static_cast<std::size_t>(out_), y.data.data(),
                static_cast<std::size_t>(out_), true);
  return y;
}

Tensor Linear::backward(const Tensor& input, const Tensor& grad_out) {
  const std::size_t n = input.dim(0);
  require_shape(grad_out, {n, static_cast<std::size_t>(out_)}, "linear backward");
  std::vector<double> gt(static_cast<std::size_t>(out_) * n);
  transpose(grad_out.data.data(), n, static_cast<std::size_t>(out_), gt.data());
  kernels::gemm(static_cast<std::size_t>(out_), static_cast<std::size_t>(in_), n, gt.data(), n, input.data.data(),
                static_cast<std::size_t>(in_), weight.grad.data.data(), static_cast<std::size_t>(in_), true);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < out_; ++j) bias.grad[static_cast<std::size_t>(j)] += grad_out.at(i, static_cast<std::size_t>(j));
  Tensor dx({n, static_cast<std::size_t>(in_)});
  kernels::gemm(n, static_cast<std::size_t>(in_), static_cast<std::size_t>(out_), grad_out.data.data(),
                static_cast<std::size_t>(out_), weight.value.data.data(), static_cast<std::size_t>(in_),
                dx.data.data(), static_cast<std::size_t>(in_), false);
  return dx;
}

// ---------------------------------------------------------------------------

ConvUnit::ConvUnit(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                   int padding, bool with_relu)
    : conv(name + ".conv", in_channels, out_channels, kernel, stride, padding),
      bn(name + ".bn", out_channels),
      relu(with_relu) {}

Tensor ConvUnit::forward(const Tensor& x, Mode mode, UnitCache* cache) {
  Tensor y = conv.forward(x, cache ? &cache->input : nullptr);
  y = bn.forward(y, mode, cache ? &cache->bn : nullptr);
  if (relu) relu_inplace(y);
  if (cache && relu) cache->output = y;
  return y;
}

Tensor ConvUnit::backward(UnitCache& cache, Tensor grad_out, bool input_grad) {
  if (relu) relu_backward_inplace(cache.output, grad_out);
  const Tensor g = bn.backward(cache.bn, grad_out);
  return conv.backward(cache.input, g, input_grad);
}

void ConvUnit::visit_params(const ParamVisitor& fn) {
  fn(conv.weight);
  fn(bn.gamma);
  fn(bn.beta);
}

void ConvUnit::visit_params(const ConstParamVisitor& fn) const {
  fn(conv.weight);
  fn(bn.gamma);
  fn(bn.beta);
}

void ConvUnit::visit_buffers(const BufferVisitor& fn) {
  fn(bn.name + ".running_mean", bn.running_mean);
  fn(bn.name + ".running_var", bn.running_var);
}

void ConvUnit::visit_buffers(const ConstBufferVisitor& fn) const {
  fn(bn.name + ".running_mean", bn.running_mean);
  fn(bn.name + ".running_var", bn.running_var);
}

// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(const std::string& name, Kind kind, int in_channels, int width, int stride) {
  if (kind == Kind::Basic) {
    out_channels_ = width;
    units_.emplace_back(name + ".unit1", in_channels, width, 3, stride, 1, true);
    units_.emplace_back(name + ".unit2", width, width, 3, 1, 1, false);
  } else {
    out_channels_ = width * kBottleneckExpansion;
    units_.emplace_back(name + ".unit1", in_channels, width, 1, 1, 0, true);
    units_.emplace_back(name + ".unit2", width, width, 3, stride, 1, true);
    units_.emplace_back(name + ".unit3", width, out_channels_, 1, 1, 0, false);
  }
  if (stride != 1 || in_channels != out_channels_) {
    shortcut_.emplace(name + ".shortcut", in_channels, out_channels_, 1, stride, 0, false);
  }
}

void ResidualBlock::init(Rng& rng) {
  for (auto& u : units_) u.init(rng);
  if (shortcut_) shortcut_->init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, BlockCache* cache) {
  if (cache) {
    cache->units.assign(units_.size(), UnitCache{});
    cache->shortcut.reset();
  }
  Tensor h = units_[0].forward(x, mode, cache ? &cache->units[0] : nullptr);
  for (std::size_t i = 1; i < units_.size(); ++i) h = units_[i].forward(h, mode, cache ? &cache->units[i] : nullptr);
  if (shortcut_) {
    if (cache) cache->shortcut.emplace();
    const Tensor s = shortcut_->forward(x, mode, cache ? &*cache->shortcut : nullptr);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  }
  relu_inplace(h);
  if (cache) cache->output = h;
  return h;
}

Tensor ResidualBlock::backward(BlockCache& cache, const Tensor& grad_out) {
  Tensor g = grad_out;
  relu_backward_inplace(cache.output, g);
  Tensor dx = shortcut_ ? shortcut_->backward(*cache.shortcut, g) : g;
  Tensor gm = g;
  for (std::size_t i = units_.size(); i-- > 0;) gm = units_[i].backward(cache.units[i], std::move(gm));
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gm[i];
  return dx;
}

void ResidualBlock::visit_params(const ParamVisitor& fn) {
  for (auto& u : units_) u.visit_params(fn);
  if (shortcut_) shortcut_->visit_params(fn);
}

void ResidualBlock::visit_params(const ConstParamVisitor& fn) const {
  for (const auto& u : units_) u.visit_params(fn);
  if (shortcut_) shortcut_->visit_params(fn);
}

void ResidualBlock::visit_buffers(const BufferVisitor& fn) {
  for (auto& u : units_) u.visit_buffers(fn);
  if (shortcut_) shortcut_->visit_buffers(fn);
}

void ResidualBlock::visit_buffers(const ConstBufferVisitor& fn) const {
  for (const auto& u : units_) u.visit_buffers(fn);
  if (shortcut_) shortcut_->visit_buffers(fn);
}

}  // namespace impash::nn
