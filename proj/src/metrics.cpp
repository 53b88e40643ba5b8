#include "impash/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "impash/kernels.hpp"

namespace impash {

namespace {

// Unweighted mean of num[c] / den[c] (0 where den[c] is 0), evaluated as one
// fraction over the common denominator. With equal denominators this is the
// same division as overall accuracy. Falls back to a running sum on overflow.
double mean_of_ratios(const std::vector<std::size_t>& num, const std::vector<std::size_t>& den) {
  const std::uint64_t k = num.size();
  std::uint64_t l = 1;
  bool fits = true;
  for (const std::size_t d : den) {
    if (d == 0) continue;
    const std::uint64_t g = std::gcd(l, static_cast<std::uint64_t>(d));
    fits = fits && !__builtin_mul_overflow(l / g, static_cast<std::uint64_t>(d), &l);
  }
  std::uint64_t total = 0, scaled = 0;
  fits = fits && !__builtin_mul_overflow(l, k, &total);
  for (std::size_t c = 0; fits && c < num.size(); ++c) {
    if (den[c] == 0) continue;
    std::uint64_t term = 0;
    fits = !__builtin_mul_overflow(static_cast<std::uint64_t>(num[c]), l / den[c], &term) &&
           !__builtin_add_overflow(scaled, term, &scaled);
  }
  if (fits) return static_cast<double>(scaled) / static_cast<double>(total);
  double mean = 0.0;
  for (std::size_t c = 0; c < num.size(); ++c)
    if (den[c]) mean += static_cast<double>(num[c]) / static_cast<double>(den[c]) / static_cast<double>(k);
  return mean;
}

}  // namespace

MetricsReport classification_report(std::span<const int> truth, std::span<const int> pred, std::size_t num_classes) {
  if (truth.size() != pred.size()) throw std::invalid_argument("classification_report: length mismatch");
  if (truth.empty()) throw std::invalid_argument("classification_report: no samples");
  if (num_classes == 0) throw std::invalid_argument("classification_report: no classes");
  MetricsReport r;
  r.num_classes = num_classes;
  r.n = truth.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
      throw std::invalid_argument("classification_report: label out of range at sample " + std::to_string(i));
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < num_classes; ++c) correct += r.confusion[c][c];
  r.acc = static_cast<double>(correct) / static_cast<double>(r.n);

  auto ratio = [&](std::size_t num, std::size_t den, const std::string& what) {
    if (den == 0) {
      r.zero_division = true;
      r.zero_division_notes.push_back(what);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  std::vector<std::size_t> tps, rows, cols;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      row += r.confusion[c][k];
      col += r.confusion[k][c];
    }
    const std::size_t tp = r.confusion[c][c];
    const double re = ratio(tp, row, "recall of class " + std::to_string(c));
    const double pre = ratio(tp, col, "precision of class " + std::to_string(c));
    const double f1 = re + pre > 0.0 ? 2.0 * pre * re / (pre + re) : 0.0;
    r.recall.push_back(re);
    r.precision.push_back(pre);
    r.f1.push_back(f1);
    tps.push_back(tp);
    rows.push_back(row);
    cols.push_back(col);
  }
  r.macro_re = mean_of_ratios(tps, rows);
  r.macro_pre = mean_of_ratios(tps, cols);
  for (const double f : r.f1) r.macro_f1 += f;
  r.macro_f1 /= static_cast<double>(num_classes);
  return r;
}

std::vector<double> silhouette_samples(const Tensor& points, std::span<const int> cluster_ids) {
  if (points.rank() != 2 || points.rows() != cluster_ids.size()) {
    throw std::invalid_argument("silhouette: points " + points.shape_string() + " do not match " +
                                std::to_string(cluster_ids.size()) + " cluster ids");
  }
  std::map<int, std::size_t> index;
  for (const int id : cluster_ids) index.emplace(id, 0);
  if (index.size() < 2) throw std::invalid_argument("silhouette: need at least two clusters");
  std::size_t next = 0;
  for (auto& [id, slot] : index) slot = next++;

  const std::size_t n = points.rows(), k = index.size();
  std::vector<std::size_t> cluster(n);
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = index[cluster_ids[i]];
    ++sizes[cluster[i]];
  }

  std::vector<double> s(n, 0.0);
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[cluster[j]] += std::sqrt(kernels::sq_dist(points.row(i), points.row(j)));
    }
    const std::size_t own = cluster[i];
    if (sizes[own] < 2) continue;
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    const double m = std::max(a, b);
    s[i] = m > 0.0 ? (b - a) / m : 0.0;
  }
  return s;
}

double silhouette(const Tensor& points, std::span<const int> cluster_ids) {
  const std::vector<double> s = silhouette_samples(points, cluster_ids);
  double sum = 0.0;
  for (const double v : s) sum += v;
  return s.empty() ? 0.0 : sum / static_cast<double>(s.size());
}

namespace {

Tensor select_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), m.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

std::size_t distinct(const std::vector<int>& ids) {
  std::vector<int> v = ids;
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace

SilhouetteReport table4_protocol(const Tensor& features, std::span<const int> class_labels,
                                 std::span<const int> domain_ids, int target_domain, bool pooled) {
  if (features.rank() != 2 || features.rows() != class_labels.size() || class_labels.size() != domain_ids.size()) {
    throw std::invalid_argument("table4_protocol: features, class labels and domain ids differ in length");
  }
  SilhouetteReport r;
  r.domain_all_pooled = pooled;
  const std::size_t n = features.rows();

  std::vector<std::size_t> target_rows;
  std::vector<int> target_classes;
  for (std::size_t i = 0; i < n; ++i) {
    if (domain_ids[i] == target_domain) {
      target_rows.push_back(i);
      target_classes.push_back(class_labels[i]);
    }
  }
  if (distinct(target_classes) >= 2) r.class_target = silhouette(select_rows(features, target_rows), target_classes);
  if (distinct({class_labels.begin(), class_labels.end()}) >= 2) r.class_all = silhouette(features, class_labels);

  std::vector<int> classes(class_labels.begin(), class_labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  double score_sum = 0.0, sample_sum = 0.0;
  std::size_t defined = 0, samples = 0;
  for (const int c : classes) {
    std::vector<std::size_t> rows;
    std::vector<int> domains;
    for (std::size_t i = 0; i < n; ++i) {
      if (class_labels[i] == c) {
        rows.push_back(i);
        domains.push_back(domain_ids[i]);
      }
    }
    DomainScore ds{c, std::nullopt};
    if (distinct(domains) >= 2) {
      const std::vector<double> s = silhouette_samples(select_rows(features, rows), domains);
      double sum = 0.0;
      for (const double v : s) sum += v;
      ds.score = sum / static_cast<double>(s.size());
      score_sum += *ds.score;
      sample_sum += sum;
      samples += s.size();
      ++defined;
    }
    r.domain_per_class.push_back(ds);
  }
  if (defined > 0) {
    r.domain_all = pooled ? sample_sum / static_cast<double>(samples) : score_sum / static_cast<double>(defined);
  }
  return r;
}

void export_features(const std::filesystem::path& path, const Tensor& features, std::span<const int> class_labels,
                     std::span<const int> domain_ids) {
  if (features.rank() != 2 || features.rows() != class_labels.size() || class_labels.size() != domain_ids.size()) {
    throw std::invalid_argument("export_features: features, class labels and domain ids differ in length");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t d = features.cols();
  for (std::size_t j = 0; j < d; ++j) out << 'f' << j << ',';
  out << "class,domain\n";
  char buf[32];
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", features.at(i, j));
      out << buf << ',';
    }
    out << class_labels[i] << ',' << domain_ids[i] << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureTable read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.size() < 13 || line.compare(line.size() - 13, 13, ",class,domain") != 0) {
    if (line != "class,domain") throw std::runtime_error(path.string() + ": header must end with class,domain");
  }
  const std::size_t d = columns - 2;
  FeatureTable t;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                               " columns");
    }
    for (std::size_t j = 0; j < d; ++j) values.push_back(std::stod(cells[j]));
    t.class_labels.push_back(std::stoi(cells[d]));
    t.domain_ids.push_back(std::stoi(cells[d + 1]));
  }
  t.features = Tensor({t.class_labels.size(), d});
  t.features.data = std::move(values);
  return t;
}

}  // namespace impash
