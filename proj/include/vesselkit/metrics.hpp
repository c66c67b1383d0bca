#pragma once

// Masked segmentation metrics: ROC AUC (Mann-Whitney with tie correction),
// F1-maximizing threshold selection and confusion-based reports.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vesselkit/image.hpp"

namespace vk {

/// Scores and labels of the pixels inside an evaluation mask.
struct MaskedScores {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;

  void append(const ImagePlane& scores, const BinaryPlane& labels, const BinaryPlane& mask);
  std::size_t positives() const;
  std::size_t negatives() const { return labels.size() - positives(); }
};

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double roc_auc(const ImagePlane& scores, const BinaryPlane& labels, const BinaryPlane& mask);

/// Sweeps the midpoints between consecutive distinct scores plus one threshold
/// below the minimum and one above the maximum; returns the threshold of
/// maximal F1, preferring the larger threshold on ties.
double select_threshold_max_f1(std::span<const double> scores, std::span<const std::uint8_t> labels);
double select_threshold_max_f1(const ImagePlane& scores, const BinaryPlane& labels,
                               const BinaryPlane& mask);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

/// score >= threshold counts as positive.
Confusion confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double threshold);

struct MetricsReport {
  double specificity = 0, sensitivity = 0, f1 = 0, accuracy = 0, auc = 0;
  double threshold = 0;
  std::size_t n_pos = 0, n_neg = 0;
  Confusion counts;
  std::map<std::string, std::size_t> param_counts;
};

MetricsReport report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                     double threshold);
MetricsReport report(const ImagePlane& scores, const BinaryPlane& labels, const BinaryPlane& mask,
                     double threshold);

struct MeanStd {
  double mean = 0, stddev = 0;
};

/// Per-image mean and (population) standard deviation of each metric.
struct PerImageSummary {
  MeanStd specificity, sensitivity, f1, accuracy, auc;
  std::size_t images = 0;
};

PerImageSummary summarize(const std::vector<MetricsReport>& per_image);

/// Column set of the evaluation table, in order.
inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"specificity", "sensitivity", "F1", "accuracy", "AUC"};
  return cols;
}

struct TableRow {
  std::string name;
  MetricsReport pooled;
  PerImageSummary per_image;
};

/// Aligned text table: one row per pipeline, pooled values with per-image
/// mean +- std in brackets.
std::string format_metrics_table(const std::vector<TableRow>& rows);
/// CSV with a header row: pipeline, mode, the metric columns, threshold.
std::string format_metrics_csv(const std::vector<TableRow>& rows);

}  // namespace vk
