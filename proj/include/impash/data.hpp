#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "impash/image.hpp"

namespace impash {

inline constexpr int kExcluded = -1;

// Translates a dataset's own class names onto the unified label set.
struct ClassMap {
  std::vector<std::string> source_names;
  std::vector<std::string> unified_names;
  // Parallel to source_names: unified index or kExcluded.
  std::vector<int> mapping;
  // Alternative spellings (e.g. distribution folder names) for source names.
  std::vector<std::pair<std::string, std::size_t>> aliases;

  // Case-insensitive. nullopt for an unknown name, kExcluded for a dropped one.
  std::optional<int> lookup(std::string_view name) const;
};

// Nine-class source corpus grouped onto the seven shared tissue classes.
ClassMap k19_to_unified();
// Eight-class target corpus; complex stroma has no counterpart and is dropped.
ClassMap k16_to_unified();
ClassMap identity_map(const std::vector<std::string>& names);

const std::vector<std::string>& unified_class_names();

struct ImageSample {
  Image pixels;
  int class_label = 0;
  int domain_id = 0;
  std::string source_path;
};

struct ManifestEntry {
  std::string path;
  int class_label = 0;
  int domain_id = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::string split = "all";
  std::vector<std::string> warnings;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> counts() const;

  bool operator==(const DatasetManifest&) const = default;
};

// One subdirectory per source class; files with an image extension are listed
// in lexicographic path order. Unknown directories are an error.
DatasetManifest build_manifest(const std::filesystem::path& root, const ClassMap& class_map,
                               int domain_id);

// `path<TAB>class<TAB>domain` lines, metadata in `#` lines.
void write_manifest(const std::filesystem::path& file, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& file);

// Deterministic train/val split keyed on a hash of each path's last two
// components (class folder and file name).
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double val_fraction);

DatasetManifest merge_manifests(const DatasetManifest& a, const DatasetManifest& b);

ImageSample load_sample(const ManifestEntry& entry);

struct SyntheticOptions {
  std::uint64_t seed = 0;
  int n_per_class = 64;
  int n_classes = 4;
  int tile_size = 112;
};

// Class decides the tissue-like geometry, domain decides a global stain
// transform. Output is already quantized to 8 bits so that it is identical to
// what a PNG round trip yields.
Image render_synthetic_tile(const SyntheticOptions& options, int class_label, int domain_id,
                            int index);

// Writes <out>/<source|target>/class_<k>/tile_<i>.png plus source.tsv and
// target.tsv, and returns (source, target) manifests.
std::pair<DatasetManifest, DatasetManifest> generate_synthetic_two_domain(
    const SyntheticOptions& options, const std::filesystem::path& out_dir);

}  // namespace impash
