#include "impash/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "impash/rng.hpp"

namespace impash {

void ShuffleConfig::validate() const {
  if (grid < 1 || resize < grid || resize % grid != 0) {
    throw std::invalid_argument("shuffle: resize must be a positive multiple of grid");
  }
  if (crop < 1 || crop > cell()) throw std::invalid_argument("shuffle: cell crop must fit inside a grid cell");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw std::invalid_argument("shuffle: crop scale range must satisfy 0 < min <= max <= 1");
  }
}

void InfoMinConfig::validate() const {
  if (view_size < 1) throw std::invalid_argument("infomin: view size must be positive");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw std::invalid_argument("infomin: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) throw std::invalid_argument("infomin: bad aspect ratio range");
  if (blur_sigma_min <= 0.0 || blur_sigma_min > blur_sigma_max) throw std::invalid_argument("infomin: bad blur sigma range");
}

std::string ShuffleRecord::to_string() const {
  std::ostringstream os;
  os << "crop_box x=" << crop_box.x << " y=" << crop_box.y << " w=" << crop_box.w << " h=" << crop_box.h
     << "\nflip " << (flip ? 1 : 0) << " vflip " << (vflip ? 1 : 0) << "\ncell_offsets";
  for (const auto& [dx, dy] : cell_offsets) os << ' ' << dx << ',' << dy;
  os << "\npermutation";
  for (const int p : permutation) os << ' ' << p;
  os << '\n';
  return os.str();
}

namespace {

void require_usable(const Image& image) {
  if (image.height < 2 || image.width < 2) throw std::invalid_argument("augment: image smaller than 2x2");
}

// Area ratio drawn from [scale_min, scale_max], aspect ratio log-uniform. The
// returned box always honors the area bound on integer pixel counts.
Box sample_area_crop(Rng& rng, int height, int width, double scale_min, double scale_max,
                     double ratio_min, double ratio_max) {
  const double area = static_cast<double>(height) * width;
  const auto in_bounds = [&](int w, int h) {
    const double ratio = static_cast<double>(w) * h / area;
    return w >= 1 && h >= 1 && w <= width && h <= height && ratio >= scale_min && ratio <= scale_max;
  };
  const double log_lo = std::log(ratio_min), log_hi = std::log(ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale_min, scale_max);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (in_bounds(w, h)) {
      const int x = rng.uniform_int(0, width - w);
      const int y = rng.uniform_int(0, height - h);
      return {x, y, w, h};
    }
  }
  return {};
}

Box centered_fallback(int height, int width, double scale_min, double scale_max,
                      double ratio_min, double ratio_max) {
  // Largest centered box with the aspect ratio clamped into range.
  const double in_ratio = static_cast<double>(width) / height;
  int w = width, h = height;
  if (in_ratio < ratio_min) {
    h = std::min(height, static_cast<int>(std::lround(w / ratio_min)));
  } else if (in_ratio > ratio_max) {
    w = std::min(width, static_cast<int>(std::lround(h * ratio_max)));
  }
  const double ratio = static_cast<double>(w) * h / (static_cast<double>(width) * height);
  if (ratio < scale_min || ratio > scale_max) {
    // Shrink both sides uniformly towards the middle of the scale range.
    const double s = std::sqrt(0.5 * (scale_min + scale_max));
    const int sw = std::max(1, static_cast<int>(std::lround(width * s)));
    const int sh = std::max(1, static_cast<int>(std::lround(height * s)));
    const double r = static_cast<double>(sw) * sh / (static_cast<double>(width) * height);
    if (r >= scale_min && r <= scale_max) return {(width - sw) / 2, (height - sh) / 2, sw, sh};
    return {0, 0, width, height};
  }
  return {(width - w) / 2, (height - h) / 2, w, h};
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void clamp01(Image& image) {
  for (float& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

ShuffleRecord sample_shuffle_record(int height, int width, const ShuffleConfig& config,
                                    std::uint64_t seed) {
  config.validate();
  if (height < 2 || width < 2) throw std::invalid_argument("patch_shuffle: image smaller than 2x2");
  Rng rng(seed);
  ShuffleRecord record;
  record.crop_box = sample_area_crop(rng, height, width, config.scale_min, config.scale_max,
                                     3.0 / 4.0, 4.0 / 3.0);
  if (record.crop_box.w == 0) {
    record.crop_box = centered_fallback(height, width, config.scale_min, config.scale_max, 3.0 / 4.0, 4.0 / 3.0);
  }
  record.flip = rng.bernoulli(config.flip_p);
  record.vflip = config.vertical_flip && rng.bernoulli(config.flip_p);
  const int slack = config.cell() - config.crop;
  const int cells = config.grid * config.grid;
  for (int i = 0; i < cells; ++i) {
    const int dx = rng.uniform_int(0, slack);
    const int dy = rng.uniform_int(0, slack);
    record.cell_offsets.emplace_back(dx, dy);
  }
  record.permutation.resize(static_cast<std::size_t>(cells));
  std::iota(record.permutation.begin(), record.permutation.end(), 0);
  rng.shuffle(std::span<int>(record.permutation));
  return record;
}

Image shuffle_canvas(const Image& image, const ShuffleRecord& record, const ShuffleConfig& config) {
  require_usable(image);
  Image canvas = resize_bilinear(crop(image, record.crop_box), config.resize, config.resize);
  if (record.flip) canvas = flip_horizontal(canvas);
  if (record.vflip) canvas = flip_vertical(canvas);
  return canvas;
}

Image apply_shuffle_record(const Image& image, const ShuffleRecord& record,
                           const ShuffleConfig& config) {
  config.validate();
  const int cells = config.grid * config.grid;
  if (static_cast<int>(record.permutation.size()) != cells ||
      static_cast<int>(record.cell_offsets.size()) != cells) {
    throw std::invalid_argument("shuffle record does not match the grid configuration");
  }
  const Image canvas = shuffle_canvas(image, record, config);
  const int cell = config.cell();
  const int crop_side = config.crop;
  Image out(config.output_size(), config.output_size());
  for (int pos = 0; pos < cells; ++pos) {
    const int src_cell = record.permutation[static_cast<std::size_t>(pos)];
    const auto [dx, dy] = record.cell_offsets[static_cast<std::size_t>(src_cell)];
    const int sx = (src_cell % config.grid) * cell + dx;
    const int sy = (src_cell / config.grid) * cell + dy;
    const int ox = (pos % config.grid) * crop_side;
    const int oy = (pos / config.grid) * crop_side;
    for (int y = 0; y < crop_side; ++y) {
      const float* src = &canvas.pixels[(static_cast<std::size_t>(sy + y) * canvas.width + sx) * 3];
      float* dst = &out.pixels[(static_cast<std::size_t>(oy + y) * out.width + ox) * 3];
      std::copy(src, src + static_cast<std::size_t>(crop_side) * 3, dst);
    }
  }
  return out;
}

std::pair<Image, ShuffleRecord> patch_shuffle(const Image& image, std::uint64_t seed,
                                              const ShuffleConfig& config) {
  require_usable(image);
  ShuffleRecord record = sample_shuffle_record(image.height, image.width, config, seed);
  Image view = apply_shuffle_record(image, record, config);
  return {std::move(view), std::move(record)};
}

void adjust_brightness(Image& image, double factor) {
  for (float& v : image.pixels) v = static_cast<float>(v * factor);
  clamp01(image);
}

void adjust_contrast(Image& image, double factor) {
  double mean = 0.0;
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    mean += luma(image.pixels[3 * i], image.pixels[3 * i + 1], image.pixels[3 * i + 2]);
  }
  mean /= static_cast<double>(std::max<std::size_t>(n, 1));
  for (float& v : image.pixels) v = static_cast<float>(factor * v + (1.0 - factor) * mean);
  clamp01(image);
}

void adjust_saturation(Image& image, double factor) {
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    float* p = &image.pixels[3 * i];
    const double gray = luma(p[0], p[1], p[2]);
    for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(factor * p[c] + (1.0 - factor) * gray);
  }
  clamp01(image);
}

void adjust_hue(Image& image, double shift) {
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    float* p = &image.pixels[3 * i];
    const double r = p[0], g = p[1], b = p[2];
    const double maxc = std::max({r, g, b});
    const double minc = std::min({r, g, b});
    const double delta = maxc - minc;
    if (delta <= 0.0) continue;
    const double v = maxc;
    const double s = delta / maxc;
    double h;
    if (maxc == r) h = (g - b) / delta;
    else if (maxc == g) h = 2.0 + (b - r) / delta;
    else h = 4.0 + (r - g) / delta;
    h = h / 6.0 + shift;
    h -= std::floor(h);
    const double h6 = h * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double pp = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    std::array<double, 3> rgb;
    switch (sector) {
      case 0: rgb = {v, t, pp}; break;
      case 1: rgb = {q, v, pp}; break;
      case 2: rgb = {pp, v, t}; break;
      case 3: rgb = {pp, q, v}; break;
      case 4: rgb = {t, pp, v}; break;
      default: rgb = {v, pp, q}; break;
    }
    for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(rgb[c]);
  }
  clamp01(image);
}

void to_grayscale(Image& image) {
  const std::size_t n = image.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    float* p = &image.pixels[3 * i];
    const float g = luma(p[0], p[1], p[2]);
    p[0] = p[1] = p[2] = g;
  }
}

Image gaussian_blur(const Image& image, double sigma) {
  const int radius = std::max(1, std::min(static_cast<int>(std::ceil(3.0 * sigma)),
                                          std::max(image.width, image.height) / 2));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  Image tmp(image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, image.width - 1);
          s += kernel[static_cast<std::size_t>(k + radius)] * image.at(y, xx, c);
        }
        tmp.at(y, x, c) = static_cast<float>(s);
      }
  Image out(image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, image.height - 1);
          s += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = static_cast<float>(s);
      }
  return out;
}

Image infomin_view(const Image& image, std::uint64_t seed, const InfoMinConfig& config) {
  config.validate();
  require_usable(image);
  Rng rng(seed);

  Box box{0, 0, image.width, image.height};
  if (config.scale_min < 1.0) {
    box = sample_area_crop(rng, image.height, image.width, config.scale_min, config.scale_max,
                           config.ratio_min, config.ratio_max);
    if (box.w == 0) {
      box = centered_fallback(image.height, image.width, config.scale_min, config.scale_max,
                              config.ratio_min, config.ratio_max);
    }
  }
  Image view = resize_bilinear(crop(image, box), config.view_size, config.view_size);

  if (rng.bernoulli(config.flip_p)) view = flip_horizontal(view);
  if (config.vertical_flip && rng.bernoulli(config.flip_p)) view = flip_vertical(view);

  if (rng.bernoulli(config.jitter_p)) {
    const double b = rng.uniform(std::max(0.0, 1.0 - config.brightness), 1.0 + config.brightness);
    const double c = rng.uniform(std::max(0.0, 1.0 - config.contrast), 1.0 + config.contrast);
    const double s = rng.uniform(std::max(0.0, 1.0 - config.saturation), 1.0 + config.saturation);
    const double h = rng.uniform(-config.hue, config.hue);
    std::array<int, 4> order{0, 1, 2, 3};
    rng.shuffle(std::span<int>(order));
    for (const int op : order) {
      switch (op) {
        case 0: adjust_brightness(view, b); break;
        case 1: adjust_contrast(view, c); break;
        case 2: adjust_saturation(view, s); break;
        default: adjust_hue(view, h); break;
      }
    }
  }
  if (rng.bernoulli(config.grayscale_p)) to_grayscale(view);
  if (rng.bernoulli(config.blur_p)) {
    view = gaussian_blur(view, rng.uniform(config.blur_sigma_min, config.blur_sigma_max));
  }
  return view;
}

ViewQuadruple make_views(const Image& image, std::uint64_t seed, const AugmentConfig& config) {
  ViewQuadruple views;
  views.v1 = infomin_view(image, derive_seed(seed, "view1"), config.infomin);
  views.v2 = infomin_view(image, derive_seed(seed, "view2"), config.infomin);
  std::tie(views.v3, views.record3) = patch_shuffle(image, derive_seed(seed, "view3"), config.shuffle);
  std::tie(views.v4, views.record4) = patch_shuffle(image, derive_seed(seed, "view4"), config.shuffle);
  return views;
}

}  // namespace impash
