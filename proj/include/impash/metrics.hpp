#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impash/tensor.hpp"

namespace impash {

struct MetricsReport {
  std::size_t num_classes = 0;
  std::size_t n = 0;
  // confusion[t][p]: samples of true class t predicted as p.
  std::vector<std::vector<std::size_t>> confusion;
  double acc = 0.0;
  double macro_re = 0.0;
  double macro_pre = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> f1;
  // Set when a per-class ratio had a zero denominator and was reported as 0.
  bool zero_division = false;
  std::vector<std::string> zero_division_notes;
};

MetricsReport classification_report(std::span<const int> truth, std::span<const int> pred, std::size_t num_classes);

// Mean silhouette with Euclidean distance. Points in singleton clusters score 0,
// as does a point whose a and b are both 0.
double silhouette(const Tensor& points, std::span<const int> cluster_ids);
std::vector<double> silhouette_samples(const Tensor& points, std::span<const int> cluster_ids);

struct DomainScore {
  int class_label = 0;
  std::optional<double> score;  // nullopt when the class lacks a domain
};

struct SilhouetteReport {
  std::optional<double> class_target;  // class clusters, target domain only
  std::optional<double> class_all;     // class clusters, every domain
  std::vector<DomainScore> domain_per_class;
  std::optional<double> domain_all;
  bool domain_all_pooled = false;
};

// Class-level: silhouette over class ids on the target subset and on all
// points. Domain-level: within each class, silhouette over domain ids; "All" is
// the mean over defined classes, or with `pooled` the mean of every
// per-point domain silhouette computed within its own class.
SilhouetteReport table4_protocol(const Tensor& features, std::span<const int> class_labels,
                                 std::span<const int> domain_ids, int target_domain = 1, bool pooled = false);

// CSV with columns f0..f{D-1},class,domain; values printed with 9 significant
// digits.
void export_features(const std::filesystem::path& path, const Tensor& features, std::span<const int> class_labels,
                     std::span<const int> domain_ids);

struct FeatureTable {
  Tensor features;
  std::vector<int> class_labels;
  std::vector<int> domain_ids;
};

FeatureTable read_features_csv(const std::filesystem::path& path);

}  // namespace impash
