// impash: command-line front end for every stage of the toolkit.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "impash/augment.hpp"
#include "impash/config.hpp"
#include "impash/data.hpp"
#include "impash/metrics.hpp"
#include "impash/pipeline.hpp"
#include "impash/pretrain.hpp"
#include "impash/probe.hpp"

namespace fs = std::filesystem;
using namespace impash;

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset = "desk";
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "Config file (key = value lines); overrides --preset");
    app->add_option("--preset", preset, "Built-in preset when no --config is given")
        ->check(CLI::IsMember({"desk", "full"}));
    app->add_option("--set", overrides, "Override a config key, as key=value (repeatable)");
  }

  Settings settings() const {
    Config c = file.empty() ? impash::preset(preset) : Config::load(file);
    apply_overrides(c, overrides);
    return resolve(c);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ClassMap class_map_named(const std::string& name, const fs::path& root) {
  if (name == "k19") return k19_to_unified();
  if (name == "k16") return k16_to_unified();
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return identity_map(names);
}

// Side-by-side panels of the original and the four views on a white canvas.
Image preview_grid(const Image& original, const ViewQuadruple& v) {
  const Image* panels[] = {&original, &v.v1, &v.v2, &v.v3, &v.v4};
  int side = 0;
  for (const Image* p : panels) side = std::max({side, p->height, p->width});
  const int gap = 4;
  Image grid(side + 2 * gap, 5 * side + 6 * gap, 1.0f);
  for (int k = 0; k < 5; ++k) {
    const Image& p = *panels[k];
    const int x0 = gap + k * (side + gap), y0 = gap;
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x)
        for (int c = 0; c < 3; ++c) grid.at(y0 + y, x0 + x, c) = p.at(y, x, c);
  }
  return grid;
}

int cmd_dataset(bool synthetic, const std::string& root, const std::string& map_name, int domain,
                const std::string& out, double val_fraction, std::uint64_t seed, int n_per_class, int n_classes,
                int tile_size) {
  if (synthetic) {
    SyntheticOptions o;
    o.seed = seed;
    o.n_per_class = n_per_class;
    o.n_classes = n_classes;
    o.tile_size = tile_size;
    const auto [src, tgt] = generate_synthetic_two_domain(o, out);
    std::printf("wrote %zu source and %zu target tiles under %s\n", src.size(), tgt.size(), out.c_str());
    return 0;
  }
  if (root.empty()) throw std::invalid_argument("dataset: give --root or --synthetic");
  const DatasetManifest m = build_manifest(root, class_map_named(map_name, root), domain);
  for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (val_fraction > 0.0) {
    const auto [train, val] = split_manifest(m, val_fraction);
    const fs::path base(out);
    write_manifest(base.string() + ".train", train);
    write_manifest(base.string() + ".val", val);
  }
  write_manifest(out, m);
  const auto counts = m.counts();
  for (std::size_t c = 0; c < counts.size(); ++c) std::printf("%s\t%zu\n", m.class_names[c].c_str(), counts[c]);
  std::printf("total\t%zu\n", m.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised contrastive pretraining with PatchShuffling and InfoMin views"};
  app.require_subcommand(1);
  std::string current = "cli";

  // dataset
  auto* ds = app.add_subcommand("dataset", "Build a manifest from a class-per-folder tree, or render the synthetic set");
  bool ds_synth = false;
  std::string ds_root, ds_map = "identity", ds_out;
  int ds_domain = 0, ds_per_class = 64, ds_classes = 4, ds_tile = 112;
  double ds_val = 0.0;
  std::uint64_t ds_seed = 0;
  ds->add_flag("--synthetic", ds_synth, "Render the synthetic two-domain dataset into --out");
  ds->add_option("--root", ds_root, "Root directory with one subdirectory per class");
  ds->add_option("--map", ds_map, "Class map: k19, k16 or identity")->check(CLI::IsMember({"k19", "k16", "identity"}));
  ds->add_option("--domain", ds_domain, "Domain id recorded for every entry");
  ds->add_option("--val-fraction", ds_val, "Also write <out>.train and <out>.val with this validation share");
  ds->add_option("--seed", ds_seed, "Synthetic data seed");
  ds->add_option("--n-per-class", ds_per_class, "Synthetic tiles per class and domain");
  ds->add_option("--n-classes", ds_classes, "Synthetic class count");
  ds->add_option("--tile-size", ds_tile, "Synthetic tile side in pixels");
  ds->add_option("--out", ds_out, "Manifest file, or output directory with --synthetic")->required();

  // augment-preview
  auto* ap = app.add_subcommand("augment-preview", "Render the four views of one image next to the original");
  ConfigArgs ap_cfg;
  ap_cfg.attach(ap);
  std::string ap_image, ap_out;
  std::uint64_t ap_seed = 0;
  int ap_class = 0;
  ap->add_option("--image", ap_image, "Input image; a synthetic tile is used when omitted");
  ap->add_option("--synthetic-class", ap_class, "Class of the synthetic tile");
  ap->add_option("--seed", ap_seed, "View seed");
  ap->add_option("--out", ap_out, "Output PNG; the shuffle records go to <out>.txt")->required();

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Contrastive pretraining on a manifest");
  ConfigArgs pt_cfg;
  pt_cfg.attach(pt);
  std::string pt_data, pt_out;
  bool pt_resume = false, pt_quiet = false;
  int pt_max_epochs = -1;
  pt->add_option("--data", pt_data, "Training manifest")->required();
  pt->add_option("--out", pt_out, "Output directory")->required();
  pt->add_flag("--resume", pt_resume, "Continue from <out>/checkpoint_last.ckpt");
  pt->add_option("--max-epochs", pt_max_epochs, "Stop after this many epochs in this invocation");
  pt->add_flag("--quiet", pt_quiet, "No per-epoch progress");

  // probe
  auto* pb = app.add_subcommand("probe", "Train the linear classifier on frozen features");
  std::string pb_ckpt, pb_train, pb_out;
  std::vector<std::string> pb_overrides;
  pb->add_option("--checkpoint", pb_ckpt, "Pretraining checkpoint")->required();
  pb->add_option("--train", pb_train, "Labelled training manifest")->required();
  pb->add_option("--out", pb_out, "Output head file")->required();
  pb->add_option("--set", pb_overrides, "Override a config key from the checkpoint, as key=value");

  // predict
  auto* pr = app.add_subcommand("predict", "Predict labels for a manifest");
  std::string pr_head, pr_data, pr_out, pr_ckpt;
  pr->add_option("--head", pr_head, "Probe head file")->required();
  pr->add_option("--data", pr_data, "Manifest to label")->required();
  pr->add_option("--out", pr_out, "Output CSV (path,true_label,pred_label)")->required();
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint; defaults to the one recorded in the head");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Accuracy, macro recall/precision/F1 and confusion matrix");
  std::string ev_pred, ev_out;
  std::size_t ev_classes = 0;
  ev->add_option("--pred", ev_pred, "Prediction CSV from predict")->required();
  ev->add_option("--out", ev_out, "Output JSON report")->required();
  ev->add_option("--classes", ev_classes, "Class count (default: largest label + 1)");

  // silhouette
  auto* si = app.add_subcommand("silhouette", "Class-level and domain-level silhouette scores");
  std::string si_features, si_out;
  int si_target = 1;
  bool si_pooled = false;
  si->add_option("--features", si_features, "Feature CSV from export-features")->required();
  si->add_option("--out", si_out, "Output JSON report")->required();
  si->add_option("--target-domain", si_target, "Domain id treated as the target");
  si->add_flag("--pooled", si_pooled, "Pool per-point domain scores for the All row instead of averaging classes");

  // export-features
  auto* ex = app.add_subcommand("export-features", "Write frozen 128-d features with class and domain columns");
  std::string ex_ckpt, ex_out;
  std::vector<std::string> ex_data;
  ex->add_option("--checkpoint", ex_ckpt, "Pretraining checkpoint")->required();
  ex->add_option("--data", ex_data, "One or more manifests")->required();
  ex->add_option("--out", ex_out, "Output CSV")->required();

  // run-all
  auto* ra = app.add_subcommand("run-all", "Synthetic data, pretraining, probe, prediction and reports in one go");
  ConfigArgs ra_cfg;
  ra_cfg.attach(ra);
  std::string ra_out;
  bool ra_quiet = false;
  ra->add_option("--out", ra_out, "Run directory")->required();
  ra->add_flag("--quiet", ra_quiet, "No per-epoch progress");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ds) {
      current = "dataset";
      return cmd_dataset(ds_synth, ds_root, ds_map, ds_domain, ds_out, ds_val, ds_seed, ds_per_class, ds_classes,
                         ds_tile);
    }
    if (*ap) {
      current = "augment-preview";
      const Settings s = ap_cfg.settings();
      Image img;
      if (ap_image.empty()) {
        SyntheticOptions o = s.synthetic;
        img = render_synthetic_tile(o, ap_class, 0, 0);
      } else {
        img = load_image(ap_image);
      }
      const ViewQuadruple v = make_views(img, ap_seed, s.augment);
      save_png(ap_out, preview_grid(resize_bilinear(img, s.augment.infomin.view_size, s.augment.infomin.view_size), v));
      const std::string text = "v3\n" + v.record3.to_string() + "\nv4\n" + v.record4.to_string() + "\n";
      write_text(ap_out + ".txt", text);
      std::fputs(text.c_str(), stdout);
      return 0;
    }
    if (*pt) {
      current = "pretrain";
      const Settings s = pt_cfg.settings();
      PretrainOptions o;
      o.resume = pt_resume;
      o.max_epochs_this_run = pt_max_epochs;
      o.verbose = !pt_quiet;
      const fs::path ckpt = run_pretraining(s, read_manifest(pt_data), pt_out, o);
      std::printf("%s\n", ckpt.c_str());
      return 0;
    }
    if (*pb) {
      current = "probe";
      Settings s;
      ModelBundle model = load_encoder(pb_ckpt, &s);
      if (!pb_overrides.empty()) {
        Config c = s.source;
        apply_overrides(c, pb_overrides);
        s = resolve(c);
      }
      const DatasetManifest m = read_manifest(pb_train);
      const FeatureSet f = extract_features(model, m, s.eval_resize, s.eval_crop);
      for (const auto& miss : f.missing) std::fprintf(stderr, "missing: %s\n", miss.c_str());
      ClassifierHead head = train_probe(f.features, f.labels, m.num_classes(), s.probe, s.sub_seed("probe"));
      head.class_names = m.class_names;
      head.checkpoint = fs::absolute(pb_ckpt).string();
      save_head(pb_out, head);
      const auto pred = predict(head, f.features).labels;
      std::size_t ok = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == f.labels[i];
      std::printf("train accuracy %.4f over %zu samples\n", pred.empty() ? 0.0 : double(ok) / pred.size(), pred.size());
      return 0;
    }
    if (*pr) {
      current = "predict";
      const ClassifierHead head = load_head(pr_head);
      const std::string ckpt = pr_ckpt.empty() ? head.checkpoint : pr_ckpt;
      if (ckpt.empty()) throw std::invalid_argument("no checkpoint recorded in the head; pass --checkpoint");
      Settings s;
      ModelBundle model = load_encoder(ckpt, &s);
      const FeatureSet f = extract_features(model, read_manifest(pr_data), s.eval_resize, s.eval_crop);
      for (const auto& miss : f.missing) std::fprintf(stderr, "missing: %s\n", miss.c_str());
      const Predictions p = predict(head, f.features);
      std::vector<PredictionRow> rows;
      for (std::size_t i = 0; i < p.labels.size(); ++i) rows.push_back({f.paths[i], f.labels[i], p.labels[i]});
      write_predictions_csv(pr_out, rows);
      return 0;
    }
    if (*ev) {
      current = "evaluate";
      const auto rows = read_predictions_csv(ev_pred);
      std::vector<int> truth, pred;
      int top = -1;
      for (const auto& r : rows) {
        truth.push_back(r.true_label);
        pred.push_back(r.pred_label);
        top = std::max({top, r.true_label, r.pred_label});
      }
      const std::size_t classes = ev_classes ? ev_classes : static_cast<std::size_t>(top + 1);
      const MetricsReport rep = classification_report(truth, pred, classes);
      const std::string text = metrics_to_json(rep, {}).dump(2) + "\n";
      write_text(ev_out, text);
      std::printf("acc %.4f  macro_re %.4f  macro_pre %.4f  macro_f1 %.4f\n", rep.acc, rep.macro_re, rep.macro_pre,
                  rep.macro_f1);
      return 0;
    }
    if (*si) {
      current = "silhouette";
      const FeatureTable t = read_features_csv(si_features);
      const SilhouetteReport rep = table4_protocol(t.features, t.class_labels, t.domain_ids, si_target, si_pooled);
      const std::string text = silhouette_to_json(rep).dump(2) + "\n";
      write_text(si_out, text);
      std::fputs(text.c_str(), stdout);
      return 0;
    }
    if (*ex) {
      current = "export-features";
      Settings s;
      ModelBundle model = load_encoder(ex_ckpt, &s);
      DatasetManifest all;
      for (const auto& d : ex_data) all = all.entries.empty() ? read_manifest(d) : merge_manifests(all, read_manifest(d));
      const FeatureSet f = extract_features(model, all, s.eval_resize, s.eval_crop);
      for (const auto& miss : f.missing) std::fprintf(stderr, "missing: %s\n", miss.c_str());
      export_features(ex_out, f.features, f.labels, f.domains);
      return 0;
    }
    if (*ra) {
      current = "run-all";
      const Settings s = ra_cfg.settings();
      RunAllOptions o;
      o.verbose = !ra_quiet;
      const RunAllResult r = run_all(s, ra_out, o);
      std::printf("target accuracy %.4f (random-init encoder %.4f)\nreport: %s\n", r.target_acc, r.baseline_target_acc,
                  r.report_path.c_str());
      return 0;
    }
  } catch (const StageError& e) {
    std::fprintf(stderr, "error [%s] %s\n", current.c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [%s]: %s\n", current.c_str(), e.what());
    return 1;
  }
  return 0;
}
