#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "impash/archive.hpp"
#include "impash/augment.hpp"
#include "impash/data.hpp"
#include "impash/loss.hpp"
#include "impash/memory.hpp"
#include "impash/model.hpp"
#include "impash/optim.hpp"

namespace impash {

struct Settings;

struct PretrainConfig {
  int epochs = 200;
  int batch_size = 256;
  double base_lr = 0.03;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double alpha = 0.9999;
  double tau = 0.07;
  int queue_size = 65536;
  // In epochs; 0 disables intermediate checkpoints.
  int checkpoint_interval = 10;
  // Fill both queues with momentum keys of the training images before the
  // first step instead of starting from random vectors alone.
  bool queue_warmup = false;

  void validate() const;
};

// Cosine annealing from base_lr at epoch 0 to 0 at `epochs`.
double lr_at(double epoch, const PretrainConfig& config);

struct PretrainState {
  ModelBundle query;
  MomentumBundle momentum;
  FeatureQueue queue1;  // InfoMin keys
  FeatureQueue queue2;  // PatchShuffling keys
  Sgd optimizer;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
};

PretrainState init_pretrain_state(const Settings& settings);

struct StepResult {
  LossValue loss;
  double lr = 0.0;
};

// One optimization step: views, query and momentum forwards, loss, SGD on the
// query bundle, momentum update, then enqueue of the new keys.
StepResult pretrain_step(PretrainState& state, std::span<const Image> batch, std::uint64_t seed,
                         double lr, const Settings& settings);

// Runs the momentum branch over ceil(K / B) batches drawn from `images` and
// enqueues the keys. Parameters are not touched.
void warm_queues(PretrainState& state, std::span<const Image> images, std::uint64_t seed, const Settings& settings);

Archive state_to_archive(const PretrainState& state, const Settings& settings);
// Rebuilds state and the settings it was trained with.
PretrainState state_from_archive(const Archive& archive, Settings* settings_out);

void save_checkpoint(const std::filesystem::path& path, const PretrainState& state,
                     const Settings& settings);
PretrainState load_checkpoint(const std::filesystem::path& path, Settings* settings_out);

// Query bundle only, for feature extraction.
ModelBundle load_encoder(const std::filesystem::path& checkpoint, Settings* settings_out);

struct PretrainOptions {
  // Resume from <out>/checkpoint_last.ckpt when present.
  bool resume = false;
  // Stop after this many epochs in this invocation (negative: run to the end).
  int max_epochs_this_run = -1;
  bool verbose = false;
};

// Trains on the manifest and writes checkpoints plus metrics.log into
// `out_dir`. Returns the path of the final checkpoint.
std::filesystem::path run_pretraining(const Settings& settings, const DatasetManifest& manifest,
                                      const std::filesystem::path& out_dir,
                                      const PretrainOptions& options = {});

inline constexpr const char* kMetricsLogHeader = "step\tepoch\tlr\tq1k1\tq1k2\tq2k1\tq2k2\ttotal";

}  // namespace impash
