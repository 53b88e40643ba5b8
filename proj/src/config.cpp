#include "impash/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "impash/rng.hpp"

namespace impash {

namespace {

constexpr std::string_view kDeskPreset = R"(# Desk-scale preset: small residual encoder on the synthetic two-domain set.
seed = 0

data.n_classes = 4
data.n_per_class = 64
data.tile_size = 112
data.val_fraction = 0.1

augment.view_size = 96
augment.scale_min = 0.2
augment.scale_max = 1.0
augment.flip_p = 0.5
augment.vertical_flip = false
augment.jitter_p = 0.8
augment.brightness = 0.4
augment.contrast = 0.4
augment.saturation = 0.4
augment.hue = 0.1
augment.grayscale_p = 0.2
augment.blur_p = 0.5
augment.blur_sigma_min = 0.1
augment.blur_sigma_max = 2.0

# 3x3 grid of 32-pixel cells, 24-pixel sub-crops, 72-pixel mosaic
shuffle.resize = 96
shuffle.grid = 3
shuffle.crop = 24
shuffle.scale_min = 0.6
shuffle.scale_max = 1.0
shuffle.flip_p = 0.5
shuffle.vertical_flip = false

model.block = basic
model.stem_channels = 16
model.stem_kernel = 3
model.stem_stride = 2
model.stem_maxpool = false
model.widths = 16,32,64
model.depths = 1,1,1
model.strides = 2,2,2
model.proj_dim = 128

pretrain.epochs = 30
pretrain.batch_size = 32
pretrain.base_lr = 0.03
pretrain.sgd_momentum = 0.9
pretrain.weight_decay = 0.0001
pretrain.alpha = 0.99
pretrain.tau = 0.07
pretrain.queue_size = 512
pretrain.checkpoint_interval = 10
pretrain.queue_warmup = true

probe.epochs = 40
probe.lr = 1.0
probe.decay_epoch = 30
probe.decay_factor = 5
probe.decay_mode = divide
probe.batch_size = 64
probe.momentum = 0.9
probe.weight_decay = 0

eval.resize = 96
eval.crop = 96

# mean | pooled
metrics.domain_all = mean
)";

constexpr std::string_view kFullPreset = R"(# Full-scale preset: ResNet-50 trunk, 224 InfoMin views, 255/85/64 shuffling.
seed = 0

data.n_classes = 4
data.n_per_class = 64
data.tile_size = 224
data.val_fraction = 0.1

augment.view_size = 224
augment.scale_min = 0.2
augment.scale_max = 1.0
augment.flip_p = 0.5
augment.vertical_flip = false
augment.jitter_p = 0.8
augment.brightness = 0.4
augment.contrast = 0.4
augment.saturation = 0.4
augment.hue = 0.1
augment.grayscale_p = 0.2
augment.blur_p = 0.5
augment.blur_sigma_min = 0.1
augment.blur_sigma_max = 2.0

shuffle.resize = 255
shuffle.grid = 3
shuffle.crop = 64
shuffle.scale_min = 0.6
shuffle.scale_max = 1.0
shuffle.flip_p = 0.5
shuffle.vertical_flip = false

model.block = bottleneck
model.stem_channels = 64
model.stem_kernel = 7
model.stem_stride = 2
model.stem_maxpool = true
model.widths = 64,128,256,512
model.depths = 3,4,6,3
model.strides = 1,2,2,2
model.proj_dim = 128

pretrain.epochs = 200
pretrain.batch_size = 256
pretrain.base_lr = 0.03
pretrain.sgd_momentum = 0.9
pretrain.weight_decay = 0.0001
pretrain.alpha = 0.9999
pretrain.tau = 0.07
pretrain.queue_size = 65536
pretrain.checkpoint_interval = 10
pretrain.queue_warmup = false

probe.epochs = 40
probe.lr = 30
probe.decay_epoch = 30
probe.decay_factor = 5
probe.decay_mode = divide
probe.batch_size = 256
probe.momentum = 0.9
probe.weight_decay = 0

eval.resize = 255
eval.crop = 224

metrics.domain_all = mean
)";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const Config desk = Config::parse(kDeskPreset);
    for (const auto& [key, value] : desk.values()) k.insert(key);
    return k;
  }();
  return keys;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw std::invalid_argument("config key " + key + ": expected " + expected + ", got '" + value + "'");
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& origin) {
  Config config;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    if (config.has(key)) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
    config.set(key, value);
  }
  return config;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("missing config key: " + key);
  return it->second;
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string& v = raw(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double Config::get_double(const std::string& key) const {
  const std::string& v = raw(key);
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string& v = raw(key);
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    int x = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) bad_value(key, v, "a comma-separated integer list");
    out.push_back(x);
  }
  if (out.empty()) bad_value(key, v, "a non-empty integer list");
  return out;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

void Config::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config: " + path.string());
  out << to_text();
}

std::string_view desk_preset_text() { return kDeskPreset; }
std::string_view full_preset_text() { return kFullPreset; }

Config preset(std::string_view name) {
  if (name == "desk") return Config::parse(kDeskPreset, "desk preset");
  if (name == "full") return Config::parse(kFullPreset, "full preset");
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected desk or full)");
}

void apply_overrides(Config& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + a + "' is not key=value");
    const std::string key = trim(std::string_view(a).substr(0, eq));
    if (!known_keys().count(key)) throw std::invalid_argument("unknown config key: " + key);
    config.set(key, trim(std::string_view(a).substr(eq + 1)));
  }
}

std::uint64_t Settings::sub_seed(std::string_view name) const { return derive_seed(seed, name); }

Settings resolve(const Config& c) {
  for (const auto& [key, value] : c.values()) {
    if (!known_keys().count(key)) throw std::invalid_argument("unknown config key: " + key);
  }
  Settings s;
  s.source = c;
  s.seed = c.get_u64("seed");

  s.synthetic.n_classes = static_cast<int>(c.get_int("data.n_classes"));
  s.synthetic.n_per_class = static_cast<int>(c.get_int("data.n_per_class"));
  s.synthetic.tile_size = static_cast<int>(c.get_int("data.tile_size"));
  s.synthetic.seed = s.sub_seed("data");
  s.val_fraction = c.get_double("data.val_fraction");
  if (!(s.val_fraction >= 0.0 && s.val_fraction < 1.0)) {
    bad_value("data.val_fraction", c.raw("data.val_fraction"), "a fraction in [0, 1)");
  }

  auto& im = s.augment.infomin;
  im.view_size = static_cast<int>(c.get_int("augment.view_size"));
  im.scale_min = c.get_double("augment.scale_min");
  im.scale_max = c.get_double("augment.scale_max");
  im.flip_p = c.get_double("augment.flip_p");
  im.vertical_flip = c.get_bool("augment.vertical_flip");
  im.jitter_p = c.get_double("augment.jitter_p");
  im.brightness = c.get_double("augment.brightness");
  im.contrast = c.get_double("augment.contrast");
  im.saturation = c.get_double("augment.saturation");
  im.hue = c.get_double("augment.hue");
  im.grayscale_p = c.get_double("augment.grayscale_p");
  im.blur_p = c.get_double("augment.blur_p");
  im.blur_sigma_min = c.get_double("augment.blur_sigma_min");
  im.blur_sigma_max = c.get_double("augment.blur_sigma_max");
  im.validate();

  auto& sh = s.augment.shuffle;
  sh.resize = static_cast<int>(c.get_int("shuffle.resize"));
  sh.grid = static_cast<int>(c.get_int("shuffle.grid"));
  sh.crop = static_cast<int>(c.get_int("shuffle.crop"));
  sh.scale_min = c.get_double("shuffle.scale_min");
  sh.scale_max = c.get_double("shuffle.scale_max");
  sh.flip_p = c.get_double("shuffle.flip_p");
  sh.vertical_flip = c.get_bool("shuffle.vertical_flip");
  sh.validate();

  auto& enc = s.model.encoder;
  const std::string block = c.raw("model.block");
  if (block == "basic") {
    enc.block = nn::ResidualBlock::Kind::Basic;
  } else if (block == "bottleneck") {
    enc.block = nn::ResidualBlock::Kind::Bottleneck;
  } else {
    bad_value("model.block", block, "basic or bottleneck");
  }
  enc.stem_channels = static_cast<int>(c.get_int("model.stem_channels"));
  enc.stem_kernel = static_cast<int>(c.get_int("model.stem_kernel"));
  enc.stem_stride = static_cast<int>(c.get_int("model.stem_stride"));
  enc.stem_maxpool = c.get_bool("model.stem_maxpool");
  enc.widths = c.get_int_list("model.widths");
  enc.depths = c.get_int_list("model.depths");
  enc.strides = c.get_int_list("model.strides");
  enc.validate();
  s.model.projection_dim = static_cast<int>(c.get_int("model.proj_dim"));
  if (s.model.projection_dim < 1) bad_value("model.proj_dim", c.raw("model.proj_dim"), "a positive integer");

  auto& p = s.pretrain;
  p.epochs = static_cast<int>(c.get_int("pretrain.epochs"));
  p.batch_size = static_cast<int>(c.get_int("pretrain.batch_size"));
  p.base_lr = c.get_double("pretrain.base_lr");
  p.sgd_momentum = c.get_double("pretrain.sgd_momentum");
  p.weight_decay = c.get_double("pretrain.weight_decay");
  p.alpha = c.get_double("pretrain.alpha");
  p.tau = c.get_double("pretrain.tau");
  p.queue_size = static_cast<int>(c.get_int("pretrain.queue_size"));
  p.checkpoint_interval = static_cast<int>(c.get_int("pretrain.checkpoint_interval"));
  p.queue_warmup = c.get_bool("pretrain.queue_warmup");
  p.validate();

  auto& pr = s.probe;
  pr.epochs = static_cast<int>(c.get_int("probe.epochs"));
  pr.lr = c.get_double("probe.lr");
  pr.decay_epoch = static_cast<int>(c.get_int("probe.decay_epoch"));
  pr.decay_factor = c.get_double("probe.decay_factor");
  const std::string mode = c.raw("probe.decay_mode");
  if (mode == "divide") {
    pr.decay_mode = DecayMode::Divide;
  } else if (mode == "subtract") {
    pr.decay_mode = DecayMode::Subtract;
  } else {
    bad_value("probe.decay_mode", mode, "divide or subtract");
  }
  pr.batch_size = static_cast<int>(c.get_int("probe.batch_size"));
  pr.momentum = c.get_double("probe.momentum");
  pr.weight_decay = c.get_double("probe.weight_decay");
  pr.validate();

  s.eval_resize = static_cast<int>(c.get_int("eval.resize"));
  s.eval_crop = static_cast<int>(c.get_int("eval.crop"));
  if (s.eval_crop < 1 || s.eval_resize < s.eval_crop) {
    throw std::invalid_argument("config: eval.crop must be positive and no larger than eval.resize");
  }

  const std::string all = c.raw("metrics.domain_all");
  if (all != "mean" && all != "pooled") bad_value("metrics.domain_all", all, "mean or pooled");
  s.domain_all_pooled = all == "pooled";
  return s;
}

}  // namespace impash
