#include "impash/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace impash {

Image crop(const Image& src, const Box& box) {
  if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0 || box.x + box.w > src.width ||
      box.y + box.h > src.height) {
    throw std::out_of_range("crop box outside image");
  }
  Image out(box.h, box.w);
  for (int y = 0; y < box.h; ++y) {
    const float* srow = &src.pixels[(static_cast<std::size_t>(box.y + y) * src.width + box.x) * 3];
    std::copy(srow, srow + static_cast<std::size_t>(box.w) * 3,
              &out.pixels[static_cast<std::size_t>(y) * box.w * 3]);
  }
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> result(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, in - 1);
    result[static_cast<std::size_t>(i)] = {lo, hi, s - lo};
  }
  return result;
}

}  // namespace

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.empty() || out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize of empty image");
  const auto ty = taps(src.height, out_h);
  const auto tx = taps(src.width, out_w);
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const Tap& vy = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const Tap& vx = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(vy.lo, vx.lo, c) * (1.0 - vx.frac) + src.at(vy.lo, vx.hi, c) * vx.frac;
        const double bottom = src.at(vy.hi, vx.lo, c) * (1.0 - vx.frac) + src.at(vy.hi, vx.hi, c) * vx.frac;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - vy.frac) + bottom * vy.frac);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& src) {
  Image out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(src.height - 1 - y, x, c);
  return out;
}

Image resize_center_crop(const Image& src, int shorter, int size) {
  if (size > shorter) throw std::invalid_argument("center crop larger than resized image");
  int h = shorter;
  int w = shorter;
  if (src.height < src.width) {
    w = static_cast<int>(std::lround(static_cast<double>(src.width) * shorter / src.height));
  } else if (src.width < src.height) {
    h = static_cast<int>(std::lround(static_cast<double>(src.height) * shorter / src.width));
  }
  const Image resized = (h == src.height && w == src.width) ? src : resize_bilinear(src, h, w);
  return crop(resized, Box{(w - size) / 2, (h - size) / 2, size, size});
}

namespace {

float from_level(unsigned char level) { return static_cast<float>(level / 255.0); }

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (mat.empty()) throw std::runtime_error("cannot decode image: " + path.string());
  Image out(mat.rows, mat.cols);
  if (mat.depth() == CV_8U) {
    for (int y = 0; y < mat.rows; ++y) {
      const auto* row = mat.ptr<cv::Vec3b>(y);
      for (int x = 0; x < mat.cols; ++x) {
        // OpenCV decodes as BGR.
        out.at(y, x, 0) = from_level(row[x][2]);
        out.at(y, x, 1) = from_level(row[x][1]);
        out.at(y, x, 2) = from_level(row[x][0]);
      }
    }
    return out;
  }
  const double scale = mat.depth() == CV_16U ? 1.0 / 65535.0 : 1.0;
  cv::Mat rgb;
  mat.convertTo(rgb, CV_32FC3, scale);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3f>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      out.at(y, x, 0) = std::clamp(row[x][2], 0.0f, 1.0f);
      out.at(y, x, 1) = std::clamp(row[x][1], 0.0f, 1.0f);
      out.at(y, x, 2) = std::clamp(row[x][0], 0.0f, 1.0f);
    }
  }
  return out;
}

namespace {

unsigned char to_level(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void save_png(const std::filesystem::path& path, const Image& image) {
  cv::Mat mat(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      row[x] = cv::Vec3b(to_level(image.at(y, x, 2)), to_level(image.at(y, x, 1)),
                         to_level(image.at(y, x, 0)));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("cannot write image: " + path.string());
}

void quantize_8bit(Image& image) {
  for (float& v : image.pixels) v = from_level(to_level(v));
}

}  // namespace impash
