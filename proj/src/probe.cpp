#include "impash/probe.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "impash/archive.hpp"
#include "impash/kernels.hpp"
#include "impash/loss.hpp"
#include "impash/optim.hpp"
#include "impash/rng.hpp"

namespace impash {

Tensor embed_images(ModelBundle& bundle, std::span<const Image> images, int resize, int crop,
                    std::size_t batch_size) {
  const auto dim = static_cast<std::size_t>(bundle.p1.out_features());
  Tensor out({images.size(), dim});
  if (batch_size == 0) batch_size = 1;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<Image> prepared;
    for (std::size_t i = start; i < end; ++i) prepared.push_back(resize_center_crop(images[i], resize, crop));
    const Tensor z = embed(bundle, images_to_batch(prepared, bundle.config.input_norm));
    std::copy(z.data.begin(), z.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * dim));
  }
  return out;
}

FeatureSet extract_features(ModelBundle& bundle, const DatasetManifest& manifest, int resize, int crop,
                            std::size_t batch_size) {
  FeatureSet set;
  std::vector<Image> images;
  for (const auto& e : manifest.entries) {
    try {
      images.push_back(load_sample(e).pixels);
    } catch (const std::exception&) {
      set.missing.push_back(e.path);
      continue;
    }
    set.labels.push_back(e.class_label);
    set.domains.push_back(e.domain_id);
    set.paths.push_back(e.path);
  }
  set.features = embed_images(bundle, images, resize, crop, batch_size);
  return set;
}

void ProbeConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("probe: epochs must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("probe: learning rate must be positive");
  if (decay_epoch < 0) throw std::invalid_argument("probe: decay epoch must be >= 0");
  if (decay_mode == DecayMode::Divide && !(decay_factor > 0.0)) {
    throw std::invalid_argument("probe: decay factor must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("probe: batch size must be >= 1");
  if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("probe: negative optimizer setting");
}

double probe_lr_at(double epoch, const ProbeConfig& config) {
  if (epoch < config.decay_epoch) return config.lr;
  return config.decay_mode == DecayMode::Divide ? config.lr / config.decay_factor : config.lr - config.decay_factor;
}

ClassifierHead train_probe(const Tensor& features, std::span<const int> labels, std::size_t num_classes,
                           const ProbeConfig& config, std::uint64_t seed) {
  config.validate();
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw std::invalid_argument("train_probe: features " + features.shape_string() + " do not match " +
                                std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw std::invalid_argument("train_probe: need at least two classes");
  std::vector<int> seen;
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("train_probe: label " + std::to_string(y) + " out of range");
    }
    if (std::find(seen.begin(), seen.end(), y) == seen.end()) seen.push_back(y);
  }
  if (seen.size() < 2) throw std::invalid_argument("train_probe: training labels contain a single class");

  const std::size_t n = features.rows(), d = features.cols();
  nn::Linear f("f", static_cast<int>(d), static_cast<int>(num_classes));
  Rng rng(seed);
  for (double& w : f.weight.value.data) w = 0.01 * rng.normal();
  Sgd opt(config.momentum, config.weight_decay);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = probe_lr_at(epoch, config);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Tensor x({end - start, d});
      std::vector<int> y;
      for (std::size_t i = start; i < end; ++i) {
        std::copy_n(features.row(order[i]).begin(), d, x.row(i - start).begin());
        y.push_back(labels[order[i]]);
      }
      const CrossEntropyResult ce = cross_entropy_with_grad(f.forward(x), y);
      std::fill(f.weight.grad.data.begin(), f.weight.grad.data.end(), 0.0);
      std::fill(f.bias.grad.data.begin(), f.bias.grad.data.end(), 0.0);
      f.backward(x, ce.grad_logits);
      opt.step({&f.weight, &f.bias}, lr);
    }
  }
  ClassifierHead head;
  head.weight = f.weight.value;
  head.bias = f.bias.value;
  return head;
}

Predictions predict(const ClassifierHead& head, const Tensor& features) {
  if (features.rank() != 2 || (features.rows() > 0 && features.cols() != head.dim())) {
    throw std::invalid_argument("predict: features " + features.shape_string() + " do not match head dimension " +
                                std::to_string(head.dim()));
  }
  const std::size_t n = features.rows(), c = head.num_classes();
  Predictions out;
  out.scores = Tensor({n, c});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) out.scores.at(i, k) = head.bias[k] + kernels::dot(features.row(i), head.weight.row(k));
    const auto row = out.scores.row(i);
    out.labels[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void save_head(const std::filesystem::path& path, const ClassifierHead& head) {
  Archive a;
  a.put("kind", std::string("impash-probe-head"));
  a.put("weight", head.weight);
  a.put("bias", head.bias);
  std::string names;
  for (std::size_t i = 0; i < head.class_names.size(); ++i) names += (i ? "," : "") + head.class_names[i];
  a.put("class_names", names);
  a.put("checkpoint", head.checkpoint);
  a.save(path);
}

ClassifierHead load_head(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  if (!a.contains("kind") || a.text("kind") != "impash-probe-head") {
    throw std::runtime_error(path.string() + ": not a probe head file");
  }
  ClassifierHead head;
  head.weight = a.tensor("weight");
  head.bias = a.tensor("bias");
  std::istringstream in(a.text("class_names"));
  std::string name;
  while (std::getline(in, name, ',')) head.class_names.push_back(name);
  if (a.contains("checkpoint")) head.checkpoint = a.text("checkpoint");
  return head;
}

}  // namespace impash
