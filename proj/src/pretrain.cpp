#include "impash/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "impash/config.hpp"
#include "impash/rng.hpp"

namespace impash {

void PretrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("pretrain: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("pretrain: batch size must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("pretrain: base learning rate must be positive");
  if (sgd_momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("pretrain: negative optimizer setting");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("pretrain: alpha must lie in [0, 1]");
  if (!(tau > 0.0)) throw std::invalid_argument("pretrain: temperature must be positive");
  if (queue_size < 1) throw std::invalid_argument("pretrain: queue size must be >= 1");
  if (checkpoint_interval < 0) throw std::invalid_argument("pretrain: checkpoint interval must be >= 0");
}

double lr_at(double epoch, const PretrainConfig& config) {
  if (config.epochs <= 0) return config.base_lr;
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs));
}

PretrainState init_pretrain_state(const Settings& settings) {
  PretrainState state;
  state.query = ModelBundle(settings.model);
  state.query.init(settings.sub_seed("init"));
  state.momentum = init_momentum(state.query, settings.pretrain.alpha);
  const std::uint64_t queue_seed = settings.sub_seed("queue");
  const auto k = static_cast<std::size_t>(settings.pretrain.queue_size);
  const auto dim = static_cast<std::size_t>(settings.model.projection_dim);
  state.queue1 = FeatureQueue::create(k, derive_seed(queue_seed, "queue1"), dim);
  state.queue2 = FeatureQueue::create(k, derive_seed(queue_seed, "queue2"), dim);
  state.optimizer = Sgd(settings.pretrain.sgd_momentum, settings.pretrain.weight_decay);
  return state;
}

StepResult pretrain_step(PretrainState& state, std::span<const Image> batch, std::uint64_t seed, double lr,
                         const Settings& settings) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  std::vector<Image> v1, v2, v3, v4;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ViewQuadruple views = make_views(batch[i], derive_seed(seed, i), settings.augment);
    v1.push_back(std::move(views.v1));
    v2.push_back(std::move(views.v2));
    v3.push_back(std::move(views.v3));
    v4.push_back(std::move(views.v4));
  }
  const InputNorm& norm = settings.model.input_norm;

  QueryForward q = forward_query(state.query, images_to_batch(v1, norm), images_to_batch(v3, norm));
  auto [k1, k2] = forward_momentum(state.momentum, images_to_batch(v2, norm), images_to_batch(v4, norm));

  ImpashLoss loss = impash_loss(q.q1, q.q2, k1, k2, state.queue1.snapshot(), state.queue2.snapshot(),
                                settings.pretrain.tau);
  if (!std::isfinite(loss.value.total)) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(state.step));
  }

  state.query.zero_grad();
  backward_query(state.query, q, loss.grad_q1, loss.grad_q2);
  std::vector<nn::Param*> params;
  state.query.visit_params([&](nn::Param& p) { params.push_back(&p); });
  state.optimizer.step(params, lr);

  momentum_update(state.momentum, state.query);

  state.queue1.enqueue(k1);
  state.queue2.enqueue(k2);
  ++state.step;
  return {loss.value, lr};
}

void warm_queues(PretrainState& state, std::span<const Image> images, std::uint64_t seed, const Settings& settings) {
  if (images.empty()) throw std::invalid_argument("warm_queues: no images");
  const std::size_t k = state.queue1.capacity();
  const std::size_t batch = std::min({static_cast<std::size_t>(settings.pretrain.batch_size), images.size(), k});
  Rng rng(seed);
  const InputNorm& norm = settings.model.input_norm;
  for (std::size_t filled = 0, b = 0; filled < k; filled += batch, ++b) {
    std::vector<Image> v2, v4;
    for (std::size_t i = 0; i < batch; ++i) {
      ViewQuadruple views = make_views(images[rng.below(images.size())], derive_seed(seed, b * batch + i), settings.augment);
      v2.push_back(std::move(views.v2));
      v4.push_back(std::move(views.v4));
    }
    auto [k1, k2] = forward_momentum(state.momentum, images_to_batch(v2, norm), images_to_batch(v4, norm));
    state.queue1.enqueue(k1);
    state.queue2.enqueue(k2);
  }
}

namespace {

Tensor vector_tensor(const std::vector<double>& v) {
  Tensor t({v.size()});
  t.data = v;
  return t;
}

void put_bundle(Archive& a, const std::string& prefix, const ModelBundle& bundle) {
  bundle.visit_params([&](const nn::Param& p) { a.put(prefix + "/param/" + p.name, p.value); });
  bundle.visit_buffers(
      [&](const std::string& name, const std::vector<double>& b) { a.put(prefix + "/buffer/" + name, vector_tensor(b)); });
}

void get_bundle(const Archive& a, const std::string& prefix, ModelBundle& bundle) {
  bundle.visit_params([&](nn::Param& p) {
    const Tensor& t = a.tensor(prefix + "/param/" + p.name);
    if (!t.same_shape(p.value)) {
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " + t.shape_string() + " vs " +
                               p.value.shape_string());
    }
    p.value = t;
  });
  bundle.visit_buffers([&](const std::string& name, std::vector<double>& b) {
    const Tensor& t = a.tensor(prefix + "/buffer/" + name);
    if (t.size() != b.size()) throw std::runtime_error("checkpoint: size mismatch for buffer " + name);
    b = t.data;
  });
  bundle.zero_grad();
}

void put_queue(Archive& a, const std::string& prefix, const FeatureQueue& q) {
  a.put(prefix + "/buffer", q.buffer());
  a.put(prefix + "/write_ptr", static_cast<std::int64_t>(q.write_ptr()));
  a.put(prefix + "/fill_count", static_cast<std::int64_t>(q.fill_count()));
}

FeatureQueue get_queue(const Archive& a, const std::string& prefix) {
  return FeatureQueue::restore(a.tensor(prefix + "/buffer"), static_cast<std::size_t>(a.integer(prefix + "/write_ptr")),
                               static_cast<std::size_t>(a.integer(prefix + "/fill_count")));
}

constexpr const char* kCheckpointKind = "impash-pretrain";

Settings settings_from_archive(const Archive& archive) {
  if (!archive.contains("kind") || archive.text("kind") != kCheckpointKind) {
    throw std::runtime_error("not a pretraining checkpoint");
  }
  return resolve(Config::parse(archive.text("config"), "checkpoint config"));
}

}  // namespace

Archive state_to_archive(const PretrainState& state, const Settings& settings) {
  Archive a;
  a.put("kind", std::string(kCheckpointKind));
  a.put("config", settings.source.to_text());
  a.put("epoch", state.epoch);
  a.put("step", state.step);
  put_bundle(a, "query", state.query);
  put_bundle(a, "momentum", state.momentum.branch);
  put_queue(a, "queue1", state.queue1);
  put_queue(a, "queue2", state.queue2);
  for (const auto& [name, v] : state.optimizer.velocity()) a.put("optim/velocity/" + name, vector_tensor(v));
  return a;
}

PretrainState state_from_archive(const Archive& archive, Settings* settings_out) {
  const Settings settings = settings_from_archive(archive);
  PretrainState state;
  state.query = ModelBundle(settings.model);
  get_bundle(archive, "query", state.query);
  state.momentum.branch = ModelBundle(settings.model);
  state.momentum.alpha = settings.pretrain.alpha;
  get_bundle(archive, "momentum", state.momentum.branch);
  state.queue1 = get_queue(archive, "queue1");
  state.queue2 = get_queue(archive, "queue2");
  state.optimizer = Sgd(settings.pretrain.sgd_momentum, settings.pretrain.weight_decay);
  const std::string prefix = "optim/velocity/";
  for (const auto& [key, value] : archive.entries()) {
    if (key.rfind(prefix, 0) == 0) state.optimizer.velocity()[key.substr(prefix.size())] = std::get<Tensor>(value).data;
  }
  state.epoch = archive.integer("epoch");
  state.step = archive.integer("step");
  if (settings_out) *settings_out = settings;
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const PretrainState& state, const Settings& settings) {
  state_to_archive(state, settings).save(path);
}

PretrainState load_checkpoint(const std::filesystem::path& path, Settings* settings_out) {
  try {
    return state_from_archive(Archive::load(path), settings_out);
  } catch (const std::exception& e) {
    throw std::runtime_error("loading checkpoint " + path.string() + ": " + e.what());
  }
}

ModelBundle load_encoder(const std::filesystem::path& checkpoint, Settings* settings_out) {
  try {
    const Archive archive = Archive::load(checkpoint);
    const Settings settings = settings_from_archive(archive);
    ModelBundle bundle(settings.model);
    get_bundle(archive, "query", bundle);
    if (settings_out) *settings_out = settings;
    return bundle;
  } catch (const std::exception& e) {
    throw std::runtime_error("loading checkpoint " + checkpoint.string() + ": " + e.what());
  }
}

namespace {

std::string format_log_line(std::int64_t step, std::int64_t epoch, const StepResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld\t%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", static_cast<long long>(step),
                static_cast<long long>(epoch), r.lr, r.loss.terms[0], r.loss.terms[1], r.loss.terms[2],
                r.loss.terms[3], r.loss.total);
  return buf;
}

// Keeps the header and rows up to `last_step` so a resumed run does not log a
// step twice.
void prepare_log(const std::filesystem::path& log, bool resumed, std::int64_t last_step) {
  std::vector<std::string> keep{kMetricsLogHeader};
  if (resumed && std::filesystem::exists(log)) {
    std::ifstream in(log);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find('\t'))) < last_step) keep.push_back(line);
    }
  }
  std::ofstream out(log, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + log.string());
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::filesystem::path run_pretraining(const Settings& settings, const DatasetManifest& manifest,
                                      const std::filesystem::path& out_dir, const PretrainOptions& options) {
  if (manifest.empty()) throw std::invalid_argument("pretrain: manifest is empty");
  std::filesystem::create_directories(out_dir);
  const auto last_path = out_dir / "checkpoint_last.ckpt";
  const auto final_path = out_dir / "checkpoint_final.ckpt";

  PretrainState state;
  bool resumed = false;
  if (options.resume && std::filesystem::exists(last_path)) {
    Settings saved;
    state = load_checkpoint(last_path, &saved);
    if (saved.source != settings.source) {
      throw std::runtime_error("pretrain: " + last_path.string() + " was written with a different configuration");
    }
    resumed = true;
  } else {
    state = init_pretrain_state(settings);
  }
  settings.source.save(out_dir / "resolved_config.cfg");

  std::vector<Image> images;
  images.reserve(manifest.size());
  for (const auto& e : manifest.entries) images.push_back(load_sample(e).pixels);

  if (!resumed && settings.pretrain.queue_warmup && settings.pretrain.epochs > 0) {
    warm_queues(state, images, derive_seed(settings.sub_seed("queue"), "warmup"), settings);
  }

  const auto log_path = out_dir / "metrics.log";
  prepare_log(log_path, resumed, state.step);
  std::ofstream log(log_path, std::ios::app);

  const auto& cfg = settings.pretrain;
  const std::size_t n = images.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::size_t steps_per_epoch = n / batch;
  const std::uint64_t order_seed = derive_seed(settings.sub_seed("data"), "order");
  const std::uint64_t augment_seed = settings.sub_seed("augment");

  int epochs_run = 0;
  while (state.epoch < cfg.epochs) {
    if (options.max_epochs_this_run >= 0 && epochs_run >= options.max_epochs_this_run) {
      save_checkpoint(last_path, state, settings);
      return last_path;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(order_seed, static_cast<std::uint64_t>(state.epoch)));
    rng.shuffle(std::span<std::size_t>(order));

    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<Image> chunk;
      chunk.reserve(batch);
      for (std::size_t i = 0; i < batch; ++i) chunk.push_back(images[order[s * batch + i]]);
      const double epoch_pos = static_cast<double>(state.epoch) + static_cast<double>(s) / steps_per_epoch;
      const std::int64_t step = state.step;
      StepResult r;
      try {
        r = pretrain_step(state, chunk, derive_seed(augment_seed, static_cast<std::uint64_t>(step)),
                          lr_at(epoch_pos, cfg), settings);
      } catch (const std::runtime_error&) {
        save_checkpoint(out_dir / "diagnostic.ckpt", state, settings);
        throw;
      }
      log << format_log_line(step, state.epoch, r) << '\n';
      epoch_loss += r.loss.total;
    }
    log.flush();
    ++state.epoch;
    ++epochs_run;
    if (options.verbose) {
      std::fprintf(stderr, "pretrain epoch %lld/%d loss %.4f\n", static_cast<long long>(state.epoch), cfg.epochs,
                   epoch_loss / static_cast<double>(steps_per_epoch));
    }
    if (cfg.checkpoint_interval > 0 && state.epoch % cfg.checkpoint_interval == 0 && state.epoch < cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04lld.ckpt", static_cast<long long>(state.epoch));
      save_checkpoint(out_dir / name, state, settings);
      save_checkpoint(last_path, state, settings);
    }
  }
  save_checkpoint(final_path, state, settings);
  save_checkpoint(last_path, state, settings);
  return final_path;
}

}  // namespace impash
