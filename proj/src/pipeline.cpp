#include "vesselkit/pipeline.hpp"

#include <fmt/format.h>

#include "vesselkit/ops.hpp"

namespace vk {

std::string to_string(PreprocessKind k) {
  switch (k) {
    case PreprocessKind::kNone: return "none";
    case PreprocessKind::kGuidedFilter: return "guided_filter";
    case PreprocessKind::kWildcard: return "wildcard";
  }
  return "?";
}

std::string to_string(SegmenterKind k) {
  switch (k) {
    case SegmenterKind::kFrangiClassic: return "frangi_classic";
    case SegmenterKind::kFrangiNet: return "frangi_net";
    case SegmenterKind::kWildcard: return "wildcard";
  }
  return "?";
}

PreprocessKind parse_preprocess(std::string_view s) {
  if (s == "none") return PreprocessKind::kNone;
  if (s == "guided_filter") return PreprocessKind::kGuidedFilter;
  if (s == "wildcard") return PreprocessKind::kWildcard;
  throw ConfigError(fmt::format("unknown preprocess '{}' (none, guided_filter, wildcard)", s));
}

SegmenterKind parse_segmenter(std::string_view s) {
  if (s == "frangi_classic") return SegmenterKind::kFrangiClassic;
  if (s == "frangi_net") return SegmenterKind::kFrangiNet;
  if (s == "wildcard") return SegmenterKind::kWildcard;
  throw ConfigError(fmt::format("unknown segmenter '{}' (frangi_classic, frangi_net, wildcard)", s));
}

void PipelineConfig::validate(bool for_training) const {
  if (segmenter == SegmenterKind::kFrangiClassic && preprocess != PreprocessKind::kNone) {
    throw ConfigError("frangi_classic has no differentiable input path; use preprocess = none");
  }
  if (for_training && segmenter == SegmenterKind::kFrangiClassic) {
    throw ConfigError("pipeline '" + name + "' uses frangi_classic and has no trainable parameters");
  }
  if (loss.use_rs && preprocess == PreprocessKind::kNone) {
    throw ConfigError("use_rs requires a preprocessing block");
  }
  if (bank.sigmas.empty()) throw ConfigError("frangi: at least one scale is required");
  for (double s : bank.sigmas) {
    if (!(s > 0.0)) throw ConfigError("frangi: scales must be positive");
  }
  if (!(beta > 0.0) || !(c > 0.0)) throw ConfigError("frangi: beta and c must be positive");
  loss.validate();
  if (train.steps < 0 || train.batch < 1 || train.patch < 8 || train.val_every < 1) {
    throw ConfigError("train: need steps >= 0, batch >= 1, patch >= 8, val_every >= 1");
  }
  if (!(train.optimizer.lr0 > 0.0) || !(train.optimizer.decay > 0.0 && train.optimizer.decay <= 1.0)) {
    throw ConfigError("optimizer: need lr0 > 0 and 0 < decay <= 1");
  }
  if (data.fov_erosion < 0) throw ConfigError("data: fov_erosion must be non-negative");
  if (unet.levels < 1 || unet.init_features < 1) throw ConfigError("unet: levels and features must be >= 1");
}

std::string PipelineConfig::architecture() const {
  std::string a = fmt::format("preprocess={};segmenter={}", to_string(preprocess), to_string(segmenter));
  if (segmenter != SegmenterKind::kWildcard) {
    a += fmt::format(";sigmas={};kernel_sigmas_per_side={};gamma_normalize={};polarity={}",
                     fmt::join(bank.sigmas, ","), bank.size_rule.sigmas_per_side,
                     bank.gamma_normalize ? 1 : 0,
                     polarity == Polarity::kDarkOnBright ? "dark" : "bright");
  }
  if (preprocess == PreprocessKind::kGuidedFilter) {
    a += fmt::format(";can_width={};can_dilations={};can_slope={};extractor_width={};gf_radius={};gf_epsilon={}",
                     gf.can.width, fmt::join(gf.can.dilations, ","), gf.can.slope, gf.extractor_width,
                     gf.filter.radius, gf.filter.epsilon);
  }
  if (preprocess == PreprocessKind::kWildcard || segmenter == SegmenterKind::kWildcard) {
    a += fmt::format(";unet_levels={};unet_features={};unet_norm={}", unet.levels, unet.init_features,
                     unet.use_norm ? 1 : 0);
  }
  return a;
}

std::string PipelineConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : architecture()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

VesselnessParams PipelineConfig::vesselness_init() const {
  VesselnessParams p = VesselnessParams::defaults(bank.sigmas.size());
  std::fill(p.beta.begin(), p.beta.end(), beta);
  std::fill(p.c.begin(), p.c.end(), c);
  p.polarity = polarity;
  return p;
}

PipelineConfig preset(std::string_view row) {
  PipelineConfig p;
  p.name = std::string(row);
  p.loss.use_rs = false;
  if (row == "FF") {
    p.preprocess = PreprocessKind::kNone;
    p.segmenter = SegmenterKind::kFrangiClassic;
  } else if (row == "FN") {
    p.preprocess = PreprocessKind::kNone;
    p.segmenter = SegmenterKind::kFrangiNet;
  } else if (row == "UN") {
    p.preprocess = PreprocessKind::kNone;
    p.segmenter = SegmenterKind::kWildcard;
    p.train.optimizer.lr0 = 5e-4;
  } else if (row == "UP+FN") {
    p.preprocess = PreprocessKind::kWildcard;
    p.segmenter = SegmenterKind::kFrangiNet;
  } else if (row == "UP+Rs+FN") {
    p.preprocess = PreprocessKind::kWildcard;
    p.segmenter = SegmenterKind::kFrangiNet;
    p.loss.use_rs = true;
  } else if (row == "GF+FN") {
    p.preprocess = PreprocessKind::kGuidedFilter;
    p.segmenter = SegmenterKind::kFrangiNet;
  } else {
    throw ConfigError(fmt::format("unknown pipeline row '{}'", row));
  }
  return p;
}

std::vector<std::string> preset_names() { return {"FF", "FN", "UN", "UP+FN", "UP+Rs+FN", "GF+FN"}; }

ImagePlane prepare_input(const ImagePlane& image, const DataConfig& data) {
  return data.clahe ? clahe(image, data.clahe_cfg) : image;
}

template <typename T>
Pipeline<T>::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  switch (cfg_.preprocess) {
    case PreprocessKind::kNone: break;
    case PreprocessKind::kGuidedFilter: guided_.emplace(cfg_.gf, cfg_.seed, "gf."); break;
    case PreprocessKind::kWildcard: {
      UNetConfig u = cfg_.unet;
      u.mode = UNetMode::kPreprocess;
      unet_pre_.emplace(u, cfg_.seed + 1, "up.");
      break;
    }
  }
  switch (cfg_.segmenter) {
    case SegmenterKind::kFrangiClassic:
    case SegmenterKind::kFrangiNet: frangi_.emplace(cfg_.bank, cfg_.vesselness_init(), "frangi."); break;
    case SegmenterKind::kWildcard: {
      UNetConfig u = cfg_.unet;
      u.mode = UNetMode::kSegment;
      unet_seg_.emplace(u, cfg_.seed + 2, "un.");
      break;
    }
  }
}

template <typename T>
typename Pipeline<T>::Forward Pipeline<T>::forward(Graph<T>& g, Var<T> image) const {
  if (cfg_.segmenter == SegmenterKind::kFrangiClassic) {
    throw StateError("frangi_classic pipelines have no differentiable forward pass");
  }
  Forward f;
  Var<T> x = image;
  if (guided_) {
    f.prep_in = image;
    x = guided_->forward(g, image);
    f.prep_out = x;
  } else if (unet_pre_) {
    f.prep_in = image;
    x = unet_pre_->forward(g, image);
    f.prep_out = x;
  }
  f.probs = frangi_ ? frangi_->forward(g, x) : unet_seg_->forward(g, x);
  return f;
}

template <typename T>
ImagePlane Pipeline<T>::predict(const ImagePlane& image) const {
  if (cfg_.segmenter == SegmenterKind::kFrangiClassic) {
    return classical_frangi(image, cfg_.bank, cfg_.vesselness_init()).response;
  }
  Graph<T> g;
  Var<T> x = g.constant(to_tensor<T>(image));
  if (guided_) x = guided_->forward(g, x);
  if (unet_pre_) x = unet_pre_->forward(g, x, false);
  Var<T> probs = frangi_ ? frangi_->forward(g, x) : unet_seg_->forward(g, x, false);
  return plane_from_tensor(probs.value(), 0, 1);
}

template <typename T>
ImagePlane Pipeline<T>::enhance(const ImagePlane& image) const {
  if (!guided_ && !unet_pre_) return image;
  Graph<T> g;
  Var<T> x = g.constant(to_tensor<T>(image));
  x = guided_ ? guided_->forward(g, x) : unet_pre_->forward(g, x, false);
  return plane_from_tensor(x.value());
}

template <typename T>
void Pipeline<T>::set_training(bool on) {
  if (unet_pre_) unet_pre_->set_training(on);
  if (unet_seg_) unet_seg_->set_training(on);
}

template <typename T>
std::vector<const ModelParams<T>*> Pipeline<T>::models() const {
  std::vector<const ModelParams<T>*> m;
  if (guided_) m.push_back(&guided_->params());
  if (unet_pre_) m.push_back(&unet_pre_->params());
  // The classical filter is fixed; its kernels are not part of the pipeline state.
  if (frangi_ && cfg_.segmenter == SegmenterKind::kFrangiNet) m.push_back(&frangi_->params());
  if (unet_seg_) m.push_back(&unet_seg_->params());
  return m;
}

template <typename T>
std::vector<Parameter<T>*> Pipeline<T>::parameters() const {
  std::vector<Parameter<T>*> out;
  for (const auto* m : models()) {
    for (auto* p : m->all()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Pipeline<T>::trainable() const {
  std::vector<Parameter<T>*> out;
  for (auto* p : parameters()) {
    if (p->trainable()) out.push_back(p);
  }
  return out;
}

template <typename T>
ParamBreakdown Pipeline<T>::count_params() const {
  ParamBreakdown b;
  auto append = [&](const ParamBreakdown& part) {
    for (const auto& e : part.entries) b.entries.push_back(e);
  };
  if (guided_) append(guided_->count_params());
  if (unet_pre_) append(unet_pre_->count_params());
  if (frangi_ && cfg_.segmenter == SegmenterKind::kFrangiNet) append(frangi_->count_params());
  if (unet_seg_) append(unet_seg_->count_params());
  return b;
}

template class Pipeline<float>;
template class Pipeline<double>;

std::vector<CountRow> parameter_accounting(const PipelineConfig& cfg) {
  const FrangiNet<float> fn(cfg.bank, cfg.vesselness_init());
  const GuidedFilterLayer<float> gf(cfg.gf);
  UNetConfig ref;
  ref.levels = 3;
  ref.init_features = 16;
  ref.use_norm = true;
  ref.mode = UNetMode::kSegment;
  std::vector<CountRow> rows;
  for (const auto& [name, n] : fn.count_params().entries) rows.push_back({"  " + name, n, std::nullopt});
  rows.push_back({"Frangi-Net", fn.count_params().total(), ReferenceTargets::kFrangiNet});
  for (const auto& [name, n] : gf.count_params().entries) rows.push_back({"  " + name, n, std::nullopt});
  rows.push_back({"guided filter block", gf.count_params().total(), ReferenceTargets::kGuidedFilter});
  rows.push_back({"known-operator pipeline (GF+FN)",
                  fn.count_params().total() + gf.count_params().total(), ReferenceTargets::kKnownOperator});
  const ParamBreakdown un = count_unet_params(ref);
  for (const auto& [name, n] : un.entries) rows.push_back({"  " + name, n, std::nullopt});
  rows.push_back({"U-Net (levels 3, features 16)", un.total(), ReferenceTargets::kUNet});
  const ParamBreakdown toy = count_unet_params(cfg.unet);
  rows.push_back({fmt::format("U-Net (levels {}, features {})", cfg.unet.levels, cfg.unet.init_features),
                  toy.total(), std::nullopt});
  return rows;
}

std::string format_parameter_accounting(const std::vector<CountRow>& rows) {
  std::size_t w = 9;
  for (const auto& r : rows) w = std::max(w, r.component.size());
  std::string out = fmt::format("{:<{}}  {:>9}  {:>9}  {:>9}  {:>8}\n", "component", w, "actual", "target",
                                "delta", "delta%");
  for (const auto& r : rows) {
    if (r.target) {
      const long long delta = static_cast<long long>(r.actual) - static_cast<long long>(*r.target);
      out += fmt::format("{:<{}}  {:>9}  {:>9}  {:>+9}  {:>+7.1f}%\n", r.component, w, r.actual, *r.target,
                         delta, 100.0 * static_cast<double>(delta) / static_cast<double>(*r.target));
    } else {
      out += fmt::format("{:<{}}  {:>9}  {:>9}  {:>9}  {:>8}\n", r.component, w, r.actual, "-", "-", "-");
    }
  }
  return out;
}

}  // namespace vk
