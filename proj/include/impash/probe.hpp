#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "impash/data.hpp"
#include "impash/model.hpp"
#include "impash/tensor.hpp"

namespace impash {

struct FeatureSet {
  Tensor features;  // N x dim, unit rows
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<std::string> paths;
  std::vector<std::string> missing;
};

// Evaluation preprocessing: shorter side to `resize`, centered `crop` window,
// then g and p1 in inference mode.
FeatureSet extract_features(ModelBundle& bundle, const DatasetManifest& manifest, int resize, int crop,
                            std::size_t batch_size = 32);

// Same, from images already in memory.
Tensor embed_images(ModelBundle& bundle, std::span<const Image> images, int resize, int crop,
                    std::size_t batch_size = 32);

enum class DecayMode { Divide, Subtract };

struct ProbeConfig {
  int epochs = 40;
  double lr = 30.0;
  int decay_epoch = 30;
  double decay_factor = 5.0;
  DecayMode decay_mode = DecayMode::Divide;
  int batch_size = 256;
  double momentum = 0.9;
  double weight_decay = 0.0;

  void validate() const;
};

double probe_lr_at(double epoch, const ProbeConfig& config);

struct ClassifierHead {
  Tensor weight;  // C x dim
  Tensor bias;    // C
  std::vector<std::string> class_names;
  // Checkpoint whose features the head was trained on, when known.
  std::string checkpoint;

  std::size_t num_classes() const { return weight.rank() ? weight.rows() : 0; }
  std::size_t dim() const { return weight.rank() ? weight.cols() : 0; }
};

ClassifierHead train_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                           const ProbeConfig& config, std::uint64_t seed);

struct Predictions {
  std::vector<int> labels;
  Tensor scores;  // N x C logits
};

// Argmax of the logits; ties go to the lower class index.
Predictions predict(const ClassifierHead& head, const Tensor& features);

void save_head(const std::filesystem::path& path, const ClassifierHead& head);
ClassifierHead load_head(const std::filesystem::path& path);

}  // namespace impash
