#pragma once

// Pipeline assembly: a preprocessing block followed by a segmenter.
//
//   row        preprocess      segmenter
//   FF         none            frangi_classic
//   FN         none            frangi_net
//   UN         none            wildcard (U-Net, 2-channel softmax)
//   UP+FN      wildcard        frangi_net   (U-Net, 1-channel sigmoid)
//   UP+Rs+FN   wildcard        frangi_net   with the similarity regularizer
//   GF+FN      guided_filter   frangi_net

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vesselkit/frangi.hpp"
#include "vesselkit/guided_filter.hpp"
#include "vesselkit/phantom.hpp"
#include "vesselkit/preprocess.hpp"
#include "vesselkit/training.hpp"
#include "vesselkit/unet.hpp"

namespace vk {

enum class PreprocessKind { kNone, kGuidedFilter, kWildcard };
enum class SegmenterKind { kFrangiClassic, kFrangiNet, kWildcard };

std::string to_string(PreprocessKind k);
std::string to_string(SegmenterKind k);
PreprocessKind parse_preprocess(std::string_view s);
SegmenterKind parse_segmenter(std::string_view s);

struct DataConfig {
  int suite_size = 20;
  std::uint64_t suite_seed = 1000;
  PhantomConfig phantom{};
  bool clahe = false;
  ClaheConfig clahe_cfg{};
  int fov_erosion = 4;
  double weight_alpha = 0.18;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 50;
  int patch = 168;
  int val_every = 100;
  AugmentSpec augment{};
  OptimizerConfig optimizer{};
};

struct PipelineConfig {
  std::string name = "GF+FN";
  PreprocessKind preprocess = PreprocessKind::kGuidedFilter;
  SegmenterKind segmenter = SegmenterKind::kFrangiNet;
  std::uint64_t seed = 1;

  ScaleBank bank{};
  double beta = 0.5;
  double c = 1.0;
  Polarity polarity = Polarity::kDarkOnBright;

  GuidedFilterLayerConfig gf{};
  UNetConfig unet{};

  LossConfig loss{};
  TrainConfig train{};
  DataConfig data{};

  bool trainable() const {
    return segmenter != SegmenterKind::kFrangiClassic || preprocess != PreprocessKind::kNone;
  }
  /// Throws ConfigError on inconsistent settings; training additionally
  /// requires trainable parameters.
  void validate(bool for_training = false) const;

  /// Canonical "key=value;..." description of everything that shapes the
  /// parameter set.
  std::string architecture() const;
  /// FNV-1a hash of architecture(), hex.
  std::string fingerprint() const;

  VesselnessParams vesselness_init() const;
};

/// Configuration for one of the table rows listed above.
PipelineConfig preset(std::string_view row);
std::vector<std::string> preset_names();

/// Green-channel style input conditioning applied before any pipeline:
/// optional CLAHE.
ImagePlane prepare_input(const ImagePlane& image, const DataConfig& data);

template <typename T>
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;
  Pipeline(Pipeline&&) noexcept = default;
  Pipeline& operator=(Pipeline&&) noexcept = default;

  struct Forward {
    Var<T> probs;  // (N,2,H,W), channel 1 = vessel
    std::optional<Var<T>> prep_in;
    std::optional<Var<T>> prep_out;
  };

  /// Differentiable forward pass. Not available for frangi_classic.
  Forward forward(Graph<T>& g, Var<T> image) const;

  /// Vessel map for one image: the vessel probability, or the classical
  /// vesselness for frangi_classic.
  ImagePlane predict(const ImagePlane& image) const;
  /// Output of the preprocessing block (the input itself when there is none).
  ImagePlane enhance(const ImagePlane& image) const;

  void set_training(bool on);

  /// All tensors including running statistics, in a stable order.
  std::vector<Parameter<T>*> parameters() const;
  std::vector<Parameter<T>*> trainable() const;
  ParamBreakdown count_params() const;

  const PipelineConfig& config() const { return cfg_; }
  FrangiNet<T>* frangi() { return frangi_ ? &*frangi_ : nullptr; }
  GuidedFilterLayer<T>* guided() { return guided_ ? &*guided_ : nullptr; }
  UNet<T>* unet_pre() { return unet_pre_ ? &*unet_pre_ : nullptr; }
  UNet<T>* unet_seg() { return unet_seg_ ? &*unet_seg_ : nullptr; }

 private:
  std::vector<const ModelParams<T>*> models() const;

  PipelineConfig cfg_;
  std::optional<GuidedFilterLayer<T>> guided_;
  std::optional<UNet<T>> unet_pre_;
  std::optional<FrangiNet<T>> frangi_;
  std::optional<UNet<T>> unet_seg_;
};

extern template class Pipeline<float>;
extern template class Pipeline<double>;

/// Parameter-count targets from the reference architecture.
struct ReferenceTargets {
  static constexpr std::size_t kFrangiNet = 6525;
  static constexpr std::size_t kGuidedFilter = 3050;
  static constexpr std::size_t kKnownOperator = 9575;
  static constexpr std::size_t kUNet = 111536;
};

struct CountRow {
  std::string component;
  std::size_t actual = 0;
  std::optional<std::size_t> target;
};

/// Frangi-Net, guided filter block, their sum and the reference-size U-Net
/// (levels 3, features 16) under the given configuration.
std::vector<CountRow> parameter_accounting(const PipelineConfig& cfg);
std::string format_parameter_accounting(const std::vector<CountRow>& rows);

}  // namespace vk
