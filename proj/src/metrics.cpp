#include "vesselkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace vk {

void MaskedScores::append(const ImagePlane& s, const BinaryPlane& l, const BinaryPlane& m) {
  require_same_shape("metrics", s.height, s.width, l.height, l.width);
  require_same_shape("metrics", s.height, s.width, m.height, m.width);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!m.data[i]) continue;
    scores.push_back(s.data[i]);
    labels.push_back(l.data[i] ? 1 : 0);
  }
}

std::size_t MaskedScores::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

namespace {

void require_two_classes(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         const char* metric) {
  if (scores.size() != labels.size()) {
    throw ConfigError(std::string(metric) + ": scores and labels differ in length");
  }
  const auto pos = std::count_if(labels.begin(), labels.end(), [](auto v) { return v != 0; });
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) {
    throw UndefinedMetricError(std::string(metric) +
                               ": evaluation mask must contain both positive and negative pixels");
  }
}

MaskedScores gather(const ImagePlane& s, const BinaryPlane& l, const BinaryPlane& m) {
  MaskedScores ms;
  ms.append(s, l, m);
  return ms;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_two_classes(scores, labels, "AUC");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(scores.size() - n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double roc_auc(const ImagePlane& scores, const BinaryPlane& labels, const BinaryPlane& mask) {
  const MaskedScores ms = gather(scores, labels, mask);
  return roc_auc(ms.scores, ms.labels);
}

double select_threshold_max_f1(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_two_classes(scores, labels, "F1 threshold");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t total_pos =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto v) { return v != 0; }));

  // Candidate above the maximum: nothing is positive, F1 = 0.
  double best_t = std::nextafter(scores[order.front()], std::numeric_limits<double>::infinity());
  double best_f1 = 0.0;
  std::size_t tp = 0, fp = 0;
  // Walk thresholds downwards; each group of equal scores becomes positive together.
  for (std::size_t i = 0; i < order.size();) {
    const double v = scores[order[i]];
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == v) {
      if (labels[order[j]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++j;
    }
    const double t = j < order.size() ? 0.5 * (v + scores[order[j]])
                                      : std::nextafter(v, -std::numeric_limits<double>::infinity());
    const std::size_t fn = total_pos - tp;
    const double f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    // Strict improvement only: thresholds are visited from large to small.
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
    i = j;
  }
  return best_t;
}

double select_threshold_max_f1(const ImagePlane& scores, const BinaryPlane& labels,
                               const BinaryPlane& mask) {
  const MaskedScores ms = gather(scores, labels, mask);
  return select_threshold_max_f1(ms.scores, ms.labels);
}

Confusion confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                     double threshold) {
  require_two_classes(scores, labels, "report");
  MetricsReport r;
  r.threshold = threshold;
  r.counts = confusion(scores, labels, threshold);
  const Confusion& c = r.counts;
  r.n_pos = c.tp + c.fn;
  r.n_neg = c.tn + c.fp;
  r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(r.n_pos);
  r.specificity = static_cast<double>(c.tn) / static_cast<double>(r.n_neg);
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  r.f1 = 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  r.auc = roc_auc(scores, labels);
  return r;
}

MetricsReport report(const ImagePlane& scores, const BinaryPlane& labels, const BinaryPlane& mask,
                     double threshold) {
  const MaskedScores ms = gather(scores, labels, mask);
  return report(ms.scores, ms.labels, threshold);
}

PerImageSummary summarize(const std::vector<MetricsReport>& per_image) {
  PerImageSummary s;
  s.images = per_image.size();
  if (per_image.empty()) return s;
  auto stat = [&](auto field) {
    MeanStd m;
    for (const auto& r : per_image) m.mean += r.*field;
    m.mean /= static_cast<double>(per_image.size());
    for (const auto& r : per_image) m.stddev += (r.*field - m.mean) * (r.*field - m.mean);
    m.stddev = std::sqrt(m.stddev / static_cast<double>(per_image.size()));
    return m;
  };
  s.specificity = stat(&MetricsReport::specificity);
  s.sensitivity = stat(&MetricsReport::sensitivity);
  s.f1 = stat(&MetricsReport::f1);
  s.accuracy = stat(&MetricsReport::accuracy);
  s.auc = stat(&MetricsReport::auc);
  return s;
}

std::string format_metrics_table(const std::vector<TableRow>& rows) {
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out = fmt::format("{:<{}}", "pipeline", name_w);
  for (const auto& c : metric_columns()) out += fmt::format("  {:>20}", c);
  out += fmt::format("  {:>10}\n", "threshold");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}", r.name, name_w);
    const MeanStd* ms[] = {&r.per_image.specificity, &r.per_image.sensitivity, &r.per_image.f1,
                           &r.per_image.accuracy, &r.per_image.auc};
    const double pooled[] = {r.pooled.specificity, r.pooled.sensitivity, r.pooled.f1,
                             r.pooled.accuracy, r.pooled.auc};
    for (int i = 0; i < 5; ++i) {
      out += fmt::format("  {:>20}", fmt::format("{:.4f} ({:.4f}±{:.4f})", pooled[i], ms[i]->mean,
                                                 ms[i]->stddev));
    }
    out += fmt::format("  {:>10.6f}\n", r.pooled.threshold);
  }
  return out;
}

std::string format_metrics_csv(const std::vector<TableRow>& rows) {
  std::string out = "pipeline,mode";
  for (const auto& c : metric_columns()) out += "," + c;
  out += ",threshold\n";
  for (const auto& r : rows) {
    out += fmt::format("{},pooled,{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.8g}\n", r.name,
                       r.pooled.specificity, r.pooled.sensitivity, r.pooled.f1, r.pooled.accuracy,
                       r.pooled.auc, r.pooled.threshold);
    const auto& p = r.per_image;
    out += fmt::format("{},per_image_mean,{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.8g}\n", r.name,
                       p.specificity.mean, p.sensitivity.mean, p.f1.mean, p.accuracy.mean,
                       p.auc.mean, r.pooled.threshold);
    out += fmt::format("{},per_image_std,{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.8g}\n", r.name,
                       p.specificity.stddev, p.sensitivity.stddev, p.f1.stddev, p.accuracy.stddev,
                       p.auc.stddev, r.pooled.threshold);
  }
  return out;
}

}  // namespace vk
