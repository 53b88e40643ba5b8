#include <doctest.h>

#include <array>
#include <cmath>
#include <set>

#include "impash/augment.hpp"
#include "impash/image.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace impash;
using testutil::gradient_image;
using testutil::random_image;

namespace {

using oracle::max_pixel_diff;
using oracle::mosaic;

InfoMinConfig identity_infomin(int size) {
  InfoMinConfig c;
  c.view_size = size;
  c.scale_min = c.scale_max = 1.0;
  c.flip_p = c.jitter_p = c.grayscale_p = c.blur_p = 0.0;
  return c;
}

}  // namespace

TEST_CASE("bilinear resize matches the half-pixel oracle") {
  Rng rng(1);
  for (auto [h, w, oh, ow] : std::vector<std::array<int, 4>>{{7, 9, 7, 9}, {10, 13, 25, 6}, {64, 48, 255, 255}, {300, 211, 96, 96}}) {
    const Image img = random_image(rng, h, w);
    CHECK(max_pixel_diff(resize_bilinear(img, oh, ow), oracle::resize(img, oh, ow)) < 1e-6);
  }
  const Image img = random_image(rng, 5, 6);
  CHECK(resize_bilinear(img, 5, 6) == img);
}

TEST_CASE("PatchShuffling output is 192x192 at the default geometry") {
  const ShuffleConfig cfg;
  CHECK(cfg.cell() == 85);
  CHECK(cfg.grid * cfg.cell() == 255);
  CHECK(cfg.output_size() == 192);
  Rng rng(2);
  const auto [view, rec] = patch_shuffle(random_image(rng, 120, 150), 7, cfg);
  CHECK(view.height == 192);
  CHECK(view.width == 192);
}

TEST_CASE("PatchShuffling records: crop scale, offsets, bijective permutation, bit-exact replay") {
  const ShuffleConfig cfg;
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 40 + static_cast<int>(rng.below(200)), w = 40 + static_cast<int>(rng.below(200));
    const Image img = random_image(rng, h, w);
    const auto [view, rec] = patch_shuffle(img, rng.next_u64(), cfg);
    const double ratio = double(rec.crop_box.w) * rec.crop_box.h / (double(h) * w);
    CHECK(ratio >= 0.6);
    CHECK(ratio <= 1.0);
    CHECK(rec.crop_box.x >= 0);
    CHECK(rec.crop_box.y >= 0);
    CHECK(rec.crop_box.x + rec.crop_box.w <= w);
    CHECK(rec.crop_box.y + rec.crop_box.h <= h);
    REQUIRE(rec.cell_offsets.size() == 9);
    for (auto [dx, dy] : rec.cell_offsets) {
      CHECK(dx >= 0);
      CHECK(dx <= 21);
      CHECK(dy >= 0);
      CHECK(dy <= 21);
    }
    CHECK(std::set<int>(rec.permutation.begin(), rec.permutation.end()) == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});

    // independent replay: canvas from scratch, mosaic pixel by pixel
    const Image canvas = shuffle_canvas(img, rec, cfg);
    CHECK(max_pixel_diff(canvas, oracle::shuffle_canvas(img, rec, cfg)) < 1e-6);
    CHECK(mosaic(canvas, rec, cfg) == view);
    CHECK(apply_shuffle_record(img, rec, cfg) == view);
  }
}

TEST_CASE("grid cells tile the canvas with no gap and no overlap") {
  for (const ShuffleConfig cfg : {ShuffleConfig{}, ShuffleConfig{96, 3, 24}, ShuffleConfig{100, 4, 20}}) {
    std::vector<int> hits(static_cast<std::size_t>(cfg.resize) * cfg.resize, 0);
    for (int cell = 0; cell < cfg.grid * cfg.grid; ++cell) {
      const int x0 = (cell % cfg.grid) * cfg.cell(), y0 = (cell / cfg.grid) * cfg.cell();
      for (int y = y0; y < y0 + cfg.cell(); ++y)
        for (int x = x0; x < x0 + cfg.cell(); ++x) ++hits[static_cast<std::size_t>(y) * cfg.resize + x];
    }
    CHECK(std::all_of(hits.begin(), hits.end(), [](int v) { return v == 1; }));
  }
}

TEST_CASE("identity record reproduces the centred-crop mosaic") {
  const ShuffleConfig cfg;
  Rng rng(4);
  const Image img = random_image(rng, 255, 255);
  ShuffleRecord rec;
  rec.crop_box = {0, 0, 255, 255};
  for (int i = 0; i < 9; ++i) {
    rec.cell_offsets.emplace_back(10, 10);
    rec.permutation.push_back(i);
  }
  const Image out = apply_shuffle_record(img, rec, cfg);
  Image expect(192, 192);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          for (int ch = 0; ch < 3; ++ch) expect.at(r * 64 + y, c * 64 + x, ch) = img.at(r * 85 + 10 + y, c * 85 + 10 + x, ch);
  CHECK(out == expect);

  rec.permutation.pop_back();
  CHECK_THROWS(apply_shuffle_record(img, rec, cfg));
}

TEST_CASE("cell-to-position frequencies are uniform over 10,000 draws") {
  const ShuffleConfig cfg;
  constexpr int draws = 10000;
  std::array<std::array<int, 9>, 9> counts{};
  for (int i = 0; i < draws; ++i) {
    const ShuffleRecord r = sample_shuffle_record(255, 255, cfg, derive_seed(99, static_cast<std::uint64_t>(i)));
    for (int pos = 0; pos < 9; ++pos) ++counts[r.permutation[pos]][pos];
  }
  const double p = 1.0 / 9.0, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (int cell = 0; cell < 9; ++cell)
    for (int pos = 0; pos < 9; ++pos) {
      CAPTURE(cell);
      CAPTURE(pos);
      CHECK(std::abs(counts[cell][pos] - mean) <= 3 * sd);
    }
}

TEST_CASE("vertical flip only when enabled") {
  ShuffleConfig cfg;
  int v = 0;
  for (int i = 0; i < 200; ++i) v += sample_shuffle_record(100, 100, cfg, i).vflip;
  CHECK(v == 0);
  cfg.vertical_flip = true;
  for (int i = 0; i < 200; ++i) v += sample_shuffle_record(100, 100, cfg, i).vflip;
  CHECK(v > 50);
  CHECK(v < 150);
}

TEST_CASE("degenerate inputs and configs are rejected") {
  CHECK_THROWS(patch_shuffle(Image(1, 50), 0));
  CHECK_THROWS(patch_shuffle(Image(50, 1), 0));
  CHECK_THROWS(infomin_view(Image(1, 1), 0));
  CHECK_THROWS(ShuffleConfig{256, 3, 64}.validate());
  CHECK_THROWS(ShuffleConfig{255, 3, 86}.validate());
  ShuffleConfig bad;
  bad.scale_min = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("InfoMin view has the configured size and is seed-deterministic") {
  Rng rng(5);
  const Image img = random_image(rng, 80, 100);
  const InfoMinConfig cfg;
  const Image a = infomin_view(img, 42, cfg);
  CHECK(a.height == 224);
  CHECK(a.width == 224);
  CHECK(infomin_view(img, 42, cfg) == a);
  CHECK_FALSE(infomin_view(img, 43, cfg) == a);
  for (float v : a.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("InfoMin with every random op disabled is a plain resize") {
  Rng rng(6);
  const Image img = random_image(rng, 70, 90);
  for (std::uint64_t seed : {0ull, 1ull, 77ull})
    CHECK(max_pixel_diff(infomin_view(img, seed, identity_infomin(96)), oracle::resize(img, 96, 96)) < 1e-6);
}

TEST_CASE("photometric operations") {
  Rng rng(7);
  const Image img = random_image(rng, 9, 11);

  Image x = img;
  adjust_brightness(x, 1.0);
  CHECK(x == img);
  adjust_brightness(x, 0.5);
  CHECK(x.pixels[5] == doctest::Approx(img.pixels[5] * 0.5));

  x = img;
  adjust_contrast(x, 0.0);
  for (std::size_t i = 1; i < x.pixels.size(); ++i) CHECK(x.pixels[i] == doctest::Approx(x.pixels[0]));

  x = img;
  adjust_saturation(x, 1.0);
  CHECK(max_pixel_diff(x, img) < 1e-6);

  x = img;
  adjust_hue(x, 0.0);
  CHECK(max_pixel_diff(x, img) < 1e-5);
  adjust_hue(x, 1.0);
  CHECK(max_pixel_diff(x, img) < 1e-5);
  x = img;
  adjust_hue(x, 0.25);
  CHECK(max_pixel_diff(x, img) > 0.05);

  x = img;
  to_grayscale(x);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx) {
      CHECK(x.at(y, xx, 0) == x.at(y, xx, 1));
      CHECK(x.at(y, xx, 1) == x.at(y, xx, 2));
      CHECK(x.at(y, xx, 0) == doctest::Approx(0.299 * img.at(y, xx, 0) + 0.587 * img.at(y, xx, 1) +
                                              0.114 * img.at(y, xx, 2)).epsilon(1e-6));
    }

  const Image flat(12, 12, 0.3f);
  CHECK(max_pixel_diff(gaussian_blur(flat, 1.5), flat) < 1e-6);
  const Image blurred = gaussian_blur(img, 2.0);
  double var_in = 0, var_out = 0, mean = 0;
  for (float v : img.pixels) mean += v;
  mean /= img.pixels.size();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    var_in += (img.pixels[i] - mean) * (img.pixels[i] - mean);
    var_out += (blurred.pixels[i] - mean) * (blurred.pixels[i] - mean);
  }
  CHECK(var_out < 0.5 * var_in);
}

TEST_CASE("make_views: shapes, reproducibility, independent draws") {
  const Image img = gradient_image(128, 128);
  AugmentConfig cfg;
  cfg.infomin.view_size = 96;
  const ViewQuadruple q = make_views(img, 5, cfg);
  CHECK(q.v1.height == 96);
  CHECK(q.v3.height == 192);
  CHECK(q.v4.width == 192);
  const ViewQuadruple r = make_views(img, 5, cfg);
  CHECK(r.v1 == q.v1);
  CHECK(r.v2 == q.v2);
  CHECK(r.v3 == q.v3);
  CHECK(r.v4 == q.v4);
  CHECK(r.record3 == q.record3);
  CHECK(apply_shuffle_record(img, q.record4, cfg.shuffle) == q.v4);

  int same12 = 0, same34 = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const ViewQuadruple v = make_views(img, s, cfg);
    same12 += v.v1 == v.v2;
    same34 += v.record3 == v.record4;
  }
  CHECK(same12 == 0);
  CHECK(same34 == 0);
}

TEST_CASE("shuffle record text lists every field") {
  const ShuffleRecord r = sample_shuffle_record(100, 100, ShuffleConfig{}, 3);
  const std::string s = r.to_string();
  CHECK(s.find("crop_box") != std::string::npos);
  CHECK(s.find("permutation") != std::string::npos);
  CHECK(s.find("cell_offsets") != std::string::npos);
}
