#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "impash/image.hpp"

namespace impash {

// Geometry of the PatchShuffling view: crop -> resize to `resize` square ->
// flip -> grid x grid cells -> random `crop` sub-window per cell -> shuffled
// mosaic of side grid * crop.
struct ShuffleConfig {
  int resize = 255;
  int grid = 3;
  int crop = 64;
  double scale_min = 0.6;
  double scale_max = 1.0;
  double flip_p = 0.5;
  bool vertical_flip = false;

  int cell() const { return resize / grid; }
  int output_size() const { return grid * crop; }
  void validate() const;
};

struct ShuffleRecord {
  Box crop_box;
  bool flip = false;
  bool vflip = false;
  // Offset of the sub-crop inside each cell, indexed by cell (row-major).
  std::vector<std::pair<int, int>> cell_offsets;
  // permutation[i] is the cell shown at mosaic position i.
  std::vector<int> permutation;

  bool operator==(const ShuffleRecord&) const = default;
  std::string to_string() const;
};

struct InfoMinConfig {
  int view_size = 224;
  double scale_min = 0.2;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double flip_p = 0.5;
  bool vertical_flip = false;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  void validate() const;
};

struct AugmentConfig {
  InfoMinConfig infomin;
  ShuffleConfig shuffle;
};

// Draws a ShuffleRecord for an image of the given size.
ShuffleRecord sample_shuffle_record(int height, int width, const ShuffleConfig& config,
                                    std::uint64_t seed);

// The resize-target square after crop, resize and flip; the grid is cut from it.
Image shuffle_canvas(const Image& image, const ShuffleRecord& record, const ShuffleConfig& config);

// Deterministic replay of a record.
Image apply_shuffle_record(const Image& image, const ShuffleRecord& record,
                           const ShuffleConfig& config);

std::pair<Image, ShuffleRecord> patch_shuffle(const Image& image, std::uint64_t seed,
                                              const ShuffleConfig& config = {});

Image infomin_view(const Image& image, std::uint64_t seed, const InfoMinConfig& config = {});

struct ViewQuadruple {
  Image v1;
  Image v2;
  Image v3;
  Image v4;
  ShuffleRecord record3;
  ShuffleRecord record4;
};

// v1/v2: two InfoMin draws; v3/v4: two PatchShuffling draws. The four draws
// use independent sub-seeds of `seed`.
ViewQuadruple make_views(const Image& image, std::uint64_t seed, const AugmentConfig& config = {});

// Individual photometric operations, exposed for testing.
void adjust_brightness(Image& image, double factor);
void adjust_contrast(Image& image, double factor);
void adjust_saturation(Image& image, double factor);
void adjust_hue(Image& image, double shift);
void to_grayscale(Image& image);
Image gaussian_blur(const Image& image, double sigma);

}  // namespace impash
