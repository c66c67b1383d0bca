#include "vesselkit/experiment.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "vesselkit/ops.hpp"

namespace vk {

std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::string out = "step,lr,train_loss,val_loss,val_auc\n";
  for (const auto& r : history) {
    out += fmt::format("{},{:.9g},{},{},{}\n", r.step, r.lr,
                       std::isnan(r.train_loss) ? "" : fmt::format("{:.9g}", r.train_loss),
                       r.val_loss ? fmt::format("{:.9g}", *r.val_loss) : "",
                       r.val_auc ? fmt::format("{:.9g}", *r.val_auc) : "");
  }
  return out;
}

template <typename T>
Snapshot<T> snapshot(const Pipeline<T>& p) {
  Snapshot<T> s;
  for (const auto* param : p.parameters()) s.push_back(param->value);
  return s;
}

template <typename T>
void restore(Pipeline<T>& p, const Snapshot<T>& s) {
  const auto params = p.parameters();
  if (params.size() != s.size()) throw StateError("restore: snapshot does not match the pipeline");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (params[i]->value.shape() != s[i].shape()) {
      throw StateError("restore: shape mismatch for " + params[i]->name);
    }
    params[i]->value = s[i];
  }
}

std::vector<PreparedSample> prepare_samples(const std::vector<LabeledSample>& samples,
                                            const DataConfig& data) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PreparedSample p{s, erode_fov(s.fov, data.fov_erosion)};
    p.sample.image = prepare_input(s.image, data);
    p.sample.weight = weight_map(s.label, data.weight_alpha).weight;
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

template <typename T>
void check_finite(const Graph<T>& g, Var<T> loss, std::int64_t step) {
  if (std::isfinite(static_cast<double>(loss.value()[0]))) return;
  const auto where = g.first_non_finite();
  throw NumericError(fmt::format("non-finite loss at step {}; first non-finite value: {}", step,
                                 where.value_or("unknown")));
}

template <typename T>
void validate_step(Pipeline<T>& pipeline, const std::vector<PreparedSample>& val, LossRecord& rec) {
  if (val.empty()) return;
  pipeline.set_training(false);
  MaskedScores pooled;
  double loss_sum = 0.0;
  for (const auto& v : val) {
    Graph<T> g;
    Var<T> x = g.constant(to_tensor<T>(v.sample.image));
    auto f = pipeline.forward(g, x);
    Tensor<T> label = to_tensor<T>(v.sample.label);
    Tensor<T> weight = to_tensor<T>(v.sample.weight);
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (!v.sample.fov.data[i]) weight[i] = T{0};
    }
    auto terms = total_loss<T>(f.probs, label, weight, pipeline.trainable(), f.prep_in, f.prep_out,
                               pipeline.config().loss);
    loss_sum += static_cast<double>(terms.total.value()[0]);
    pooled.append(plane_from_tensor(f.probs.value(), 0, 1), v.sample.label, v.eval_mask);
  }
  pipeline.set_training(true);
  rec.val_loss = loss_sum / static_cast<double>(val.size());
  rec.val_auc = roc_auc(pooled.scores, pooled.labels);
}

}  // namespace

template <typename T>
TrainResult<T> train_loop(Pipeline<T>& pipeline, const std::vector<PreparedSample>& train,
                          const std::vector<PreparedSample>& val, std::uint64_t seed,
                          const std::function<void(const LossRecord&)>& on_record) {
  const PipelineConfig& cfg = pipeline.config();
  cfg.validate(true);
  if (train.empty()) throw DataError("train_loop: no training images");
  const TrainConfig& tc = cfg.train;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  OptimizerState<T> opt;
  opt.cfg = tc.optimizer;

  TrainResult<T> result;
  result.best = snapshot(pipeline);
  result.best_val_auc = -1.0;
  pipeline.set_training(true);

  auto consider = [&](LossRecord& rec, std::int64_t step) {
    validate_step(pipeline, val, rec);
    if (rec.val_auc && *rec.val_auc > result.best_val_auc) {
      result.best_val_auc = *rec.val_auc;
      result.best_step = step;
      result.best = snapshot(pipeline);
    }
  };

  const auto params = pipeline.trainable();
  for (std::int64_t step = 0; step < tc.steps; ++step) {
    LossRecord rec;
    rec.step = step;
    rec.lr = opt.learning_rate();
    if (step % tc.val_every == 0) consider(rec, step);

    std::vector<Patch> batch;
    batch.reserve(static_cast<std::size_t>(tc.batch));
    for (int b = 0; b < tc.batch; ++b) {
      auto one = sample_patches(train[pick(rng)].sample, tc.patch, 1, rng);
      batch.push_back(std::move(one.front()));
    }
    augment(batch, tc.augment, rng);
    const BatchTensors<T> bt = stack_batch<T>(batch);

    for (auto* p : pipeline.parameters()) p->zero_grad();
    Graph<T> g;
    auto f = pipeline.forward(g, g.constant(bt.image));
    auto terms = total_loss<T>(f.probs, bt.label, bt.weight, params, f.prep_in, f.prep_out, cfg.loss);
    check_finite(g, terms.total, step);
    rec.train_loss = static_cast<double>(terms.total.value()[0]);
    g.backward(terms.total);
    adam_step(opt, params);
    result.history.push_back(rec);
    if (on_record) on_record(rec);
  }
  // Final row: state after the last update (the only row when steps = 0).
  LossRecord last;
  last.step = tc.steps;
  last.lr = opt.learning_rate();
  last.train_loss = std::nan("");
  consider(last, tc.steps);
  result.history.push_back(last);
  if (on_record) on_record(last);
  return result;
}

Evaluation evaluate_maps(const std::string& name, const std::vector<ImagePlane>& val_maps,
                         const std::vector<PreparedSample>& val, const std::vector<ImagePlane>& test_maps,
                         const std::vector<PreparedSample>& test) {
  if (val.empty() || test.empty()) throw DataError("evaluate: validation and test splits are required");
  MaskedScores val_pooled;
  for (std::size_t i = 0; i < val.size(); ++i) {
    val_pooled.append(val_maps[i], val[i].sample.label, val[i].eval_mask);
  }
  const double threshold = select_threshold_max_f1(val_pooled.scores, val_pooled.labels);
  Evaluation ev;
  MaskedScores test_pooled;
  for (std::size_t i = 0; i < test.size(); ++i) {
    test_pooled.append(test_maps[i], test[i].sample.label, test[i].eval_mask);
    ev.per_image.push_back(report(test_maps[i], test[i].sample.label, test[i].eval_mask, threshold));
  }
  ev.row.name = name;
  ev.row.pooled = report(test_pooled.scores, test_pooled.labels, threshold);
  ev.row.per_image = summarize(ev.per_image);
  return ev;
}

template <typename T>
Evaluation evaluate(const Pipeline<T>& pipeline, const std::vector<PreparedSample>& val,
                    const std::vector<PreparedSample>& test) {
  std::vector<ImagePlane> vm, tm;
  for (const auto& v : val) vm.push_back(pipeline.predict(v.sample.image));
  for (const auto& t : test) tm.push_back(pipeline.predict(t.sample.image));
  Evaluation ev = evaluate_maps(pipeline.config().name, vm, val, tm, test);
  for (const auto& [name, n] : pipeline.count_params().entries) ev.row.pooled.param_counts[name] = n;
  return ev;
}

#define VK_INSTANTIATE_EXPERIMENT(T)                                                                 \
  template Snapshot<T> snapshot(const Pipeline<T>&);                                                 \
  template void restore(Pipeline<T>&, const Snapshot<T>&);                                           \
  template TrainResult<T> train_loop(Pipeline<T>&, const std::vector<PreparedSample>&,               \
                                     const std::vector<PreparedSample>&, std::uint64_t,              \
                                     const std::function<void(const LossRecord&)>&);                 \
  template Evaluation evaluate(const Pipeline<T>&, const std::vector<PreparedSample>&,               \
                               const std::vector<PreparedSample>&);

VK_INSTANTIATE_EXPERIMENT(float)
VK_INSTANTIATE_EXPERIMENT(double)

}  // namespace vk
