#include "impash/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "impash/rng.hpp"

namespace fs = std::filesystem;

namespace impash {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::size_t unified_index(std::string_view name) {
  const auto& names = unified_class_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::logic_error("not a unified class: " + std::string(name));
  return static_cast<std::size_t>(it - names.begin());
}

ClassMap make_map(const std::vector<std::pair<std::string, std::string>>& table,
                  const std::vector<std::pair<std::string, std::string>>& aliases) {
  ClassMap map;
  map.unified_names = unified_class_names();
  for (const auto& [source, target] : table) {
    map.source_names.push_back(source);
    map.mapping.push_back(target.empty() ? kExcluded : static_cast<int>(unified_index(target)));
  }
  for (const auto& [alias, source] : aliases) {
    const auto it = std::find(map.source_names.begin(), map.source_names.end(), source);
    map.aliases.emplace_back(alias, static_cast<std::size_t>(it - map.source_names.begin()));
  }
  return map;
}

bool is_image_file(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

const std::vector<std::string>& unified_class_names() {
  static const std::vector<std::string> names{"ADI", "BACK", "DEB", "LYM", "NORM", "STR", "TUM"};
  return names;
}

std::optional<int> ClassMap::lookup(std::string_view name) const {
  const std::string key = lower(name);
  for (std::size_t i = 0; i < source_names.size(); ++i) {
    if (lower(source_names[i]) == key) return mapping[i];
  }
  for (const auto& [alias, index] : aliases) {
    if (lower(alias) == key) return mapping[index];
  }
  return std::nullopt;
}

ClassMap k19_to_unified() {
  return make_map({{"ADI", "ADI"},
                   {"BACK", "BACK"},
                   {"DEB", "DEB"},
                   {"LYM", "LYM"},
                   {"MUC", "DEB"},
                   {"MUS", "STR"},
                   {"NORM", "NORM"},
                   {"STR", "STR"},
                   {"TUM", "TUM"}},
                  {{"adipose", "ADI"},
                   {"background", "BACK"},
                   {"debris", "DEB"},
                   {"lymphocytes", "LYM"},
                   {"mucus", "MUC"},
                   {"muscle", "MUS"},
                   {"normal", "NORM"},
                   {"stroma", "STR"},
                   {"tumour", "TUM"},
                   {"tumor", "TUM"}});
}

ClassMap k16_to_unified() {
  return make_map({{"TUM", "TUM"},
                   {"STR", "STR"},
                   {"COMP", ""},
                   {"LYM", "LYM"},
                   {"DEB", "DEB"},
                   {"NORM", "NORM"},
                   {"ADI", "ADI"},
                   {"BACK", "BACK"}},
                  {{"01_TUMOR", "TUM"},
                   {"02_STROMA", "STR"},
                   {"03_COMPLEX", "COMP"},
                   {"04_LYMPHO", "LYM"},
                   {"05_DEBRIS", "DEB"},
                   {"06_MUCOSA", "NORM"},
                   {"07_ADIPOSE", "ADI"},
                   {"08_EMPTY", "BACK"}});
}

ClassMap identity_map(const std::vector<std::string>& names) {
  ClassMap map;
  map.unified_names = names;
  for (std::size_t i = 0; i < names.size(); ++i) {
    map.source_names.push_back(names[i]);
    map.mapping.push_back(static_cast<int>(i));
  }
  return map;
}

std::vector<std::size_t> DatasetManifest::counts() const {
  std::vector<std::size_t> c(class_names.size(), 0);
  for (const auto& e : entries) {
    if (e.class_label >= 0 && static_cast<std::size_t>(e.class_label) < c.size()) ++c[e.class_label];
  }
  return c;
}

DatasetManifest build_manifest(const fs::path& root, const ClassMap& class_map, int domain_id) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root.string());
  DatasetManifest manifest;
  manifest.class_names = class_map.unified_names;

  std::vector<fs::path> class_dirs;
  for (const auto& item : fs::directory_iterator(root)) {
    if (item.is_directory()) class_dirs.push_back(item.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) manifest.warnings.push_back("no class directories under " + root.string());

  for (const auto& dir : class_dirs) {
    const std::string name = dir.filename().string();
    const auto label = class_map.lookup(name);
    if (!label) throw std::runtime_error("unknown class directory: " + dir.string());
    if (*label == kExcluded) continue;
    std::size_t found = 0;
    for (const auto& item : fs::directory_iterator(dir)) {
      if (!item.is_regular_file() || !is_image_file(item.path())) continue;
      manifest.entries.push_back({item.path().string(), *label, domain_id});
      ++found;
    }
    if (found == 0) manifest.warnings.push_back("empty class directory: " + dir.string());
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return manifest;
}

void write_manifest(const fs::path& file, const DatasetManifest& manifest) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + file.string());
  out << "# impash-manifest\t1\n";
  out << "# split\t" << manifest.split << '\n';
  out << "# classes\t";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) {
    out << (i ? "," : "") << manifest.class_names[i];
  }
  out << '\n';
  for (const auto& w : manifest.warnings) out << "# warning\t" << w << '\n';
  for (const auto& e : manifest.entries) {
    out << e.path << '\t' << e.class_label << '\t' << e.domain_id << '\n';
  }
  if (!out) throw std::runtime_error("failed writing manifest: " + file.string());
}

DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read manifest: " + file.string());
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      const std::string key = line.substr(2, tab - 2);
      const std::string value = line.substr(tab + 1);
      if (key == "split") {
        manifest.split = value;
      } else if (key == "classes") {
        std::stringstream ss(value);
        std::string name;
        while (std::getline(ss, name, ',')) manifest.class_names.push_back(name);
      } else if (key == "warning") {
        manifest.warnings.push_back(value);
      }
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": expected path<TAB>class<TAB>domain");
    }
    ManifestEntry e;
    e.path = line.substr(0, t1);
    e.class_label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    e.domain_id = std::stoi(line.substr(t2 + 1));
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double val_fraction) {
  DatasetManifest train;
  DatasetManifest val;
  train.class_names = val.class_names = manifest.class_names;
  train.split = "train";
  val.split = "val";
  for (const auto& e : manifest.entries) {
    // class folder + file name, so a relocated dataset splits the same way
    const fs::path p(e.path);
    const std::string key = (p.parent_path().filename() / p.filename()).generic_string();
    const double u = static_cast<double>(splitmix64(fnv1a(key)) >> 11) * 0x1.0p-53;
    (u < val_fraction ? val : train).entries.push_back(e);
  }
  return {std::move(train), std::move(val)};
}

DatasetManifest merge_manifests(const DatasetManifest& a, const DatasetManifest& b) {
  if (a.class_names != b.class_names) throw std::invalid_argument("cannot merge manifests with different class sets");
  DatasetManifest out = a;
  out.entries.insert(out.entries.end(), b.entries.begin(), b.entries.end());
  out.warnings.insert(out.warnings.end(), b.warnings.begin(), b.warnings.end());
  out.split = a.split == b.split ? a.split : "all";
  return out;
}

ImageSample load_sample(const ManifestEntry& entry) {
  return ImageSample{load_image(entry.path), entry.class_label, entry.domain_id, entry.path};
}

// ---------------------------------------------------------------------------
// Synthetic two-domain tiles.

namespace {

using Mask = std::vector<double>;

double saturate(double v) { return std::clamp(v, 0.0, 1.0); }

// Parallel stripes of random orientation (fibrous stroma-like).
Mask stripes(Rng& rng, int size, double scale) {
  Mask m(static_cast<std::size_t>(size) * size);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(9.0, 13.0) * scale;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      m[static_cast<std::size_t>(y) * size + x] =
          saturate(0.5 + 1.5 * std::sin(2.0 * std::numbers::pi * (x * c + y * s) / period + phase));
  return m;
}

// Scattered small round nuclei (lymphocyte-like).
Mask nuclei(Rng& rng, int size, double scale) {
  Mask m(static_cast<std::size_t>(size) * size, 0.0);
  const double mean_r = 4.25 * scale;
  const int count = static_cast<int>(0.3 * size * size / (std::numbers::pi * mean_r * mean_r));
  for (int n = 0; n < count; ++n) {
    const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
    const double r = rng.uniform(3.0, 5.5) * scale;
    const int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(size - 1, static_cast<int>(cx + r + 1));
    const int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(size - 1, static_cast<int>(cy + r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        double& v = m[static_cast<std::size_t>(y) * size + x];
        v = std::max(v, saturate(r - d + 0.5));
      }
  }
  return m;
}

// Rotated lattice of square glands.
Mask lattice(Rng& rng, int size, double scale) {
  Mask m(static_cast<std::size_t>(size) * size);
  const double theta = rng.uniform(0.0, std::numbers::pi / 2.0);
  const double period = rng.uniform(14.0, 20.0) * scale;
  const double ox = rng.uniform(0.0, period), oy = rng.uniform(0.0, period);
  const double c = std::cos(theta), s = std::sin(theta);
  const double half = 0.3 * period;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = x * c + y * s + ox, v = -x * s + y * c + oy;
      const double du = std::abs(u - period * std::round(u / period));
      const double dv = std::abs(v - period * std::round(v / period));
      m[static_cast<std::size_t>(y) * size + x] = saturate(half - std::max(du, dv) + 0.5);
    }
  return m;
}

// Thin membranes between large empty cells (adipose-like).
Mask membranes(Rng& rng, int size, double scale) {
  Mask m(static_cast<std::size_t>(size) * size);
  const double cell = 22.0 * scale;
  const int count = std::max(4, static_cast<int>(size * size / (cell * cell)));
  std::vector<std::array<double, 2>> seeds(static_cast<std::size_t>(count));
  for (auto& p : seeds) p = {rng.uniform(0.0, size), rng.uniform(0.0, size)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double d1 = 1e30, d2 = 1e30;
      for (const auto& p : seeds) {
        const double d = std::hypot(x + 0.5 - p[0], y + 0.5 - p[1]);
        if (d < d1) {
          d2 = d1;
          d1 = d;
        } else if (d < d2) {
          d2 = d;
        }
      }
      m[static_cast<std::size_t>(y) * size + x] = saturate(2.0 - (d2 - d1));
    }
  return m;
}

struct Stain {
  std::array<double, 3> background;
  std::array<double, 3> foreground;
};

// Domain 0 renders with a pink/purple palette; domain 1 renders the same
// geometry through a global hue rotation and contrast change.
std::array<double, 3> domain_transform(std::array<double, 3> rgb, int domain_id) {
  if (domain_id == 0) return rgb;
  // Hue rotation about the gray axis.
  const double angle = 50.0 * std::numbers::pi / 180.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const double k = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
  const std::array<std::array<double, 3>, 3> rot{{{c + k, k - r, k + r},
                                                   {k + r, c + k, k - r},
                                                   {k - r, k + r, c + k}}};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    out[i] = rot[i][0] * rgb[0] + rot[i][1] * rgb[1] + rot[i][2] * rgb[2];
  }
  const double contrast = 0.75, brightness = 0.04;
  for (auto& v : out) v = saturate(0.5 + contrast * (v - 0.5) + brightness);
  return out;
}

}  // namespace

Image render_synthetic_tile(const SyntheticOptions& options, int class_label, int domain_id,
                            int index) {
  if (options.n_classes < 2 || options.n_per_class < 1 || options.tile_size < 8) {
    throw std::invalid_argument("synthetic dataset needs >= 2 classes and a tile of >= 8 px");
  }
  const std::uint64_t tile_seed = derive_seed(
      derive_seed(options.seed, "synthetic"),
      (static_cast<std::uint64_t>(domain_id) << 40) | (static_cast<std::uint64_t>(class_label) << 20) |
          static_cast<std::uint64_t>(index));
  Rng rng(tile_seed);
  const int size = options.tile_size;
  const double scale = 1.0 + 0.4 * (class_label / 4);

  Mask mask;
  switch (class_label % 4) {
    case 0: mask = stripes(rng, size, scale); break;
    case 1: mask = nuclei(rng, size, scale); break;
    case 2: mask = lattice(rng, size, scale); break;
    default: mask = membranes(rng, size, scale); break;
  }

  const Stain stain{{0.93, 0.84, 0.90}, {0.42, 0.18, 0.52}};
  const double intensity = rng.uniform(0.85, 1.15);
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double m = saturate(mask[static_cast<std::size_t>(y) * size + x] * intensity);
      std::array<double, 3> rgb{};
      for (int ch = 0; ch < 3; ++ch) {
        rgb[ch] = saturate(stain.background[ch] * (1.0 - m) + stain.foreground[ch] * m + 0.03 * rng.normal());
      }
      rgb = domain_transform(rgb, domain_id);
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = static_cast<float>(rgb[ch]);
    }
  quantize_8bit(out);
  return out;
}

std::pair<DatasetManifest, DatasetManifest> generate_synthetic_two_domain(
    const SyntheticOptions& options, const fs::path& out_dir) {
  if (options.n_classes < 2 || options.n_per_class < 8) {
    throw std::invalid_argument("synthetic dataset needs n_classes >= 2 and n_per_class >= 8");
  }
  std::vector<std::string> names;
  for (int c = 0; c < options.n_classes; ++c) names.push_back("class_" + std::to_string(c));
  const ClassMap map = identity_map(names);

  std::array<DatasetManifest, 2> manifests;
  for (int domain = 0; domain < 2; ++domain) {
    const fs::path root = out_dir / (domain == 0 ? "source" : "target");
    for (int c = 0; c < options.n_classes; ++c) {
      for (int i = 0; i < options.n_per_class; ++i) {
        char file[32];
        std::snprintf(file, sizeof file, "tile_%05d.png", i);
        save_png(root / names[static_cast<std::size_t>(c)] / file, render_synthetic_tile(options, c, domain, i));
      }
    }
    manifests[domain] = build_manifest(root, map, domain);
    write_manifest(out_dir / (domain == 0 ? "source.tsv" : "target.tsv"), manifests[domain]);
  }
  return {std::move(manifests[0]), std::move(manifests[1])};
}

}  // namespace impash
