#include "impash/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "impash/data.hpp"
#include "impash/pretrain.hpp"
#include "impash/probe.hpp"

namespace impash {

using nlohmann::json;

json metrics_to_json(const MetricsReport& r, const std::vector<std::string>& class_names) {
  json j;
  j["n"] = r.n;
  j["acc"] = r.acc;
  j["macro_re"] = r.macro_re;
  j["macro_pre"] = r.macro_pre;
  j["macro_f1"] = r.macro_f1;
  j["confusion"] = r.confusion;
  json per_class = json::array();
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    per_class.push_back({{"class", c < class_names.size() ? class_names[c] : std::to_string(c)},
                         {"re", r.recall[c]},
                         {"pre", r.precision[c]},
                         {"f1", r.f1[c]}});
  }
  j["per_class"] = per_class;
  j["zero_division"] = r.zero_division;
  j["zero_division_notes"] = r.zero_division_notes;
  return j;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json silhouette_to_json(const SilhouetteReport& r) {
  json j;
  j["class_level"] = {{"target", optional_json(r.class_target)}, {"all", optional_json(r.class_all)}};
  json per_class = json::array();
  for (const auto& d : r.domain_per_class) per_class.push_back({{"class", d.class_label}, {"score", optional_json(d.score)}});
  j["domain_level"] = {{"per_class", per_class},
                       {"all", optional_json(r.domain_all)},
                       {"all_mode", r.domain_all_pooled ? "pooled" : "mean"}};
  return j;
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "path,true_label,pred_label\n";
  for (const auto& r : rows) out << r.path << ',' << r.true_label << ',' << r.pred_label << '\n';
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "path,true_label,pred_label") throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<PredictionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto b = line.rfind(',');
    const auto a = b == std::string::npos ? b : line.rfind(',', b - 1);
    if (a == std::string::npos) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    rows.push_back({line.substr(0, a), std::stoi(line.substr(a + 1, b - a - 1)), std::stoi(line.substr(b + 1))});
  }
  return rows;
}

namespace {

template <typename F>
auto stage(const char* name, json& timing, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto result = body();
      timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return result;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<int> argmax_labels(const ClassifierHead& head, const Tensor& features) {
  return predict(head, features).labels;
}

double accuracy(std::span<const int> truth, std::span<const int> pred) {
  if (truth.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

struct ProbeOutcome {
  ClassifierHead head;
  double source_val_acc = 0.0;
  std::vector<int> target_pred;
  MetricsReport target;
};

ProbeOutcome probe_and_score(const Settings& s, const FeatureSet& train, const FeatureSet& val, const FeatureSet& target,
                             std::size_t num_classes) {
  ProbeOutcome out;
  out.head = train_probe(train.features, train.labels, num_classes, s.probe, s.sub_seed("probe"));
  out.source_val_acc = val.labels.empty() ? 0.0 : accuracy(val.labels, argmax_labels(out.head, val.features));
  out.target_pred = argmax_labels(out.head, target.features);
  out.target = classification_report(target.labels, out.target_pred, num_classes);
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
std::vector<T> concat(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<T> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

RunAllResult run_all(const Settings& s, const std::filesystem::path& out_dir, const RunAllOptions& options) {
  json timing;
  std::filesystem::create_directories(out_dir);
  s.source.save(out_dir / "resolved_config.cfg");

  const auto [source, target] = stage("dataset", timing, [&] {
    return generate_synthetic_two_domain(s.synthetic, out_dir / "data");
  });
  const std::vector<std::string> class_names = source.class_names;
  const std::size_t num_classes = class_names.size();

  const auto checkpoint = stage("pretrain", timing, [&] {
    PretrainOptions po;
    po.verbose = options.verbose;
    return run_pretraining(s, source, out_dir / "pretrain", po);
  });

  const auto [train_split, val_split] = split_manifest(source, s.val_fraction);

  FeatureSet train, val, tgt;
  ProbeOutcome trained = stage("probe", timing, [&] {
    ModelBundle model = load_encoder(checkpoint, nullptr);
    train = extract_features(model, train_split, s.eval_resize, s.eval_crop);
    val = extract_features(model, val_split, s.eval_resize, s.eval_crop);
    tgt = extract_features(model, target, s.eval_resize, s.eval_crop);
    ProbeOutcome o = probe_and_score(s, train, val, tgt, num_classes);
    o.head.class_names = class_names;
    save_head(out_dir / "probe" / "head.bin", o.head);
    return o;
  });

  stage("predict", timing, [&] {
    std::vector<PredictionRow> rows;
    for (std::size_t i = 0; i < tgt.paths.size(); ++i) rows.push_back({tgt.paths[i], tgt.labels[i], trained.target_pred[i]});
    write_predictions_csv(out_dir / "predictions_target.csv", rows);
  });

  json silhouette_json;
  stage("evaluate", timing, [&] {
    const Tensor all = concat_rows(concat_rows(train.features, val.features), tgt.features);
    const std::vector<int> labels = concat(concat(train.labels, val.labels), tgt.labels);
    const std::vector<int> domains = concat(concat(train.domains, val.domains), tgt.domains);
    export_features(out_dir / "features.csv", all, labels, domains);
    silhouette_json = silhouette_to_json(table4_protocol(all, labels, domains, 1, s.domain_all_pooled));
  });

  ProbeOutcome baseline = stage("baseline", timing, [&] {
    ModelBundle random_model(s.model);
    random_model.init(s.sub_seed("init"));
    const FeatureSet btrain = extract_features(random_model, train_split, s.eval_resize, s.eval_crop);
    const FeatureSet bval = extract_features(random_model, val_split, s.eval_resize, s.eval_crop);
    const FeatureSet btgt = extract_features(random_model, target, s.eval_resize, s.eval_crop);
    return probe_and_score(s, btrain, bval, btgt, num_classes);
  });

  RunAllResult result;
  stage("report", timing, [&] {
    json report;
    report["seed"] = s.seed;
    report["classes"] = class_names;
    report["counts"] = {{"source", source.size()}, {"target", target.size()}, {"probe_train", train.labels.size()},
                        {"probe_val", val.labels.size()}};
    report["missing_files"] = concat(concat(train.missing, val.missing), tgt.missing);
    report["pretrained"] = {{"source_val_acc", trained.source_val_acc},
                            {"target", metrics_to_json(trained.target, class_names)},
                            {"silhouette", silhouette_json}};
    report["random_init"] = {{"source_val_acc", baseline.source_val_acc},
                             {"target", metrics_to_json(baseline.target, class_names)}};
    std::ofstream out(out_dir / "report.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report.json");
    out << report.dump(2) << '\n';
    result.report = std::move(report);
  });
  {
    std::ofstream out(out_dir / "timing.json", std::ios::trunc);
    out << timing.dump(2) << '\n';
  }
  result.target_acc = trained.target.acc;
  result.baseline_target_acc = baseline.target.acc;
  result.report_path = out_dir / "report.json";
  return result;
}

}  // namespace impash
