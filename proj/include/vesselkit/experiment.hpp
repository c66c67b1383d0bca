#pragma once

// Training loop and the validation-threshold / test-evaluation protocol.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vesselkit/metrics.hpp"
#include "vesselkit/phantom.hpp"
#include "vesselkit/pipeline.hpp"

namespace vk {

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_auc;
};

std::string loss_history_csv(const std::vector<LossRecord>& history);

template <typename T>
using Snapshot = std::vector<Tensor<T>>;

template <typename T>
Snapshot<T> snapshot(const Pipeline<T>& p);
template <typename T>
void restore(Pipeline<T>& p, const Snapshot<T>& s);

template <typename T>
struct TrainResult {
  std::vector<LossRecord> history;
  Snapshot<T> best;        // parameters at the best validation AUC (initialization included)
  std::int64_t best_step = 0;
  double best_val_auc = 0.0;
};

/// Images prepared for a pipeline: conditioned input, label, weight map and
/// the evaluation mask (FOV eroded by data.fov_erosion).
struct PreparedSample {
  LabeledSample sample;  // image replaced by prepare_input(image)
  BinaryPlane eval_mask;
};

std::vector<PreparedSample> prepare_samples(const std::vector<LabeledSample>& samples,
                                            const DataConfig& data);

/// Per step: sample a batch of patches (each from a uniformly drawn training
/// image), augment, forward, total loss, backward, Adam. Validation loss and
/// AUC are computed at step 0, every val_every steps and after the last step.
/// Throws NumericError naming the first op that produced a non-finite value.
template <typename T>
TrainResult<T> train_loop(Pipeline<T>& pipeline, const std::vector<PreparedSample>& train,
                          const std::vector<PreparedSample>& val, std::uint64_t seed,
                          const std::function<void(const LossRecord&)>& on_record = {});

struct Evaluation {
  TableRow row;
  std::vector<MetricsReport> per_image;
};

/// Threshold maximizing pooled F1 on the validation images, then pooled and
/// per-image metrics on the test images, all inside the evaluation masks.
template <typename T>
Evaluation evaluate(const Pipeline<T>& pipeline, const std::vector<PreparedSample>& val,
                    const std::vector<PreparedSample>& test);

/// Same protocol on precomputed vessel maps.
Evaluation evaluate_maps(const std::string& name, const std::vector<ImagePlane>& val_maps,
                         const std::vector<PreparedSample>& val, const std::vector<ImagePlane>& test_maps,
                         const std::vector<PreparedSample>& test);

extern template TrainResult<float> train_loop(Pipeline<float>&, const std::vector<PreparedSample>&,
                                              const std::vector<PreparedSample>&, std::uint64_t,
                                              const std::function<void(const LossRecord&)>&);
extern template TrainResult<double> train_loop(Pipeline<double>&, const std::vector<PreparedSample>&,
                                               const std::vector<PreparedSample>&, std::uint64_t,
                                               const std::function<void(const LossRecord&)>&);

}  // namespace vk
