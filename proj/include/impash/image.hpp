#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace impash {

// Interleaved RGB float image (H x W x 3), values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  bool empty() const { return pixels.empty(); }

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image& other) const = default;
};

struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Box&) const = default;
};

Image crop(const Image& src, const Box& box);

// Bilinear resampling with half-pixel centers (align_corners = false) and
// edge clamping.
Image resize_bilinear(const Image& src, int out_h, int out_w);

Image flip_horizontal(const Image& src);
Image flip_vertical(const Image& src);

// Resize so that the shorter side equals `shorter`, then take the centered
// `size` x `size` window.
Image resize_center_crop(const Image& src, int shorter, int size);

// Decodes PNG/TIFF/JPEG (8 or 16 bit, gray or color) into RGB in [0, 1].
Image load_image(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG; values are clamped and rounded to the nearest level.
void save_png(const std::filesystem::path& path, const Image& image);

// Rounds every value to the nearest multiple of 1/255 in [0, 1], matching what
// a save_png/load_image round trip produces.
void quantize_8bit(Image& image);

}  // namespace impash
