#include "vesselkit/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace vk {
namespace {

struct Binding {
  ConfigKey key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

std::string where(const std::string& s, const std::string& k) { return "[" + s + "] " + k; }

double to_double(const std::string& v, const std::string& at) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(at + ": expected a number, got '" + v + "'");
}

long long to_integer(const std::string& v, const std::string& at) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used == v.size()) return n;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(at + ": expected an integer, got '" + v + "'");
}

bool to_bool(const std::string& v, const std::string& at) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(at + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<Binding> make_bindings() {
  std::vector<Binding> b;
  auto real = [&](std::string s, std::string k, std::string d, std::function<double&(PipelineConfig&)> ref) {
    const std::string at = where(s, k);
    b.push_back({{s, k, d},
                 [ref, at](PipelineConfig& c, const std::string& v) { ref(c) = to_double(v, at); },
                 [ref](const PipelineConfig& c) { return fmt::format("{}", ref(const_cast<PipelineConfig&>(c))); }});
  };
  auto integer = [&](std::string s, std::string k, std::string d, std::function<int&(PipelineConfig&)> ref) {
    const std::string at = where(s, k);
    b.push_back({{s, k, d},
                 [ref, at](PipelineConfig& c, const std::string& v) {
                   ref(c) = static_cast<int>(to_integer(v, at));
                 },
                 [ref](const PipelineConfig& c) { return fmt::format("{}", ref(const_cast<PipelineConfig&>(c))); }});
  };
  auto seed = [&](std::string s, std::string k, std::string d,
                  std::function<std::uint64_t&(PipelineConfig&)> ref) {
    const std::string at = where(s, k);
    b.push_back({{s, k, d},
                 [ref, at](PipelineConfig& c, const std::string& v) {
                   const long long n = to_integer(v, at);
                   if (n < 0) throw ConfigError(at + ": must be non-negative");
                   ref(c) = static_cast<std::uint64_t>(n);
                 },
                 [ref](const PipelineConfig& c) { return fmt::format("{}", ref(const_cast<PipelineConfig&>(c))); }});
  };
  auto flag = [&](std::string s, std::string k, std::string d, std::function<bool&(PipelineConfig&)> ref) {
    const std::string at = where(s, k);
    b.push_back({{s, k, d},
                 [ref, at](PipelineConfig& c, const std::string& v) { ref(c) = to_bool(v, at); },
                 [ref](const PipelineConfig& c) { return ref(const_cast<PipelineConfig&>(c)) ? "true" : "false"; }});
  };

  b.push_back({{"pipeline", "row", "Table row preset applied before all other keys: FF, FN, UN, UP+FN, UP+Rs+FN, GF+FN"},
               [](PipelineConfig&, const std::string&) {},
               [](const PipelineConfig& c) { return c.name; }});
  b.push_back({{"pipeline", "name", "Display name (defaults to the row)"},
               [](PipelineConfig& c, const std::string& v) { c.name = v; },
               [](const PipelineConfig& c) { return c.name; }});
  b.push_back({{"pipeline", "preprocess", "none | guided_filter | wildcard"},
               [](PipelineConfig& c, const std::string& v) { c.preprocess = parse_preprocess(v); },
               [](const PipelineConfig& c) { return to_string(c.preprocess); }});
  b.push_back({{"pipeline", "segmenter", "frangi_classic | frangi_net | wildcard"},
               [](PipelineConfig& c, const std::string& v) { c.segmenter = parse_segmenter(v); },
               [](const PipelineConfig& c) { return to_string(c.segmenter); }});
  seed("pipeline", "seed", "Initialization and training seed", [](PipelineConfig& c) -> std::uint64_t& { return c.seed; });

  b.push_back({{"frangi", "sigmas", "Comma-separated scales in px"},
               [](PipelineConfig& c, const std::string& v) {
                 c.bank.sigmas.clear();
                 for (const auto& s : split_list(v)) c.bank.sigmas.push_back(to_double(s, "[frangi] sigmas"));
               },
               [](const PipelineConfig& c) { return fmt::format("{}", fmt::join(c.bank.sigmas, ", ")); }});
  real("frangi", "kernel_sigmas_per_side", "Kernel half-width in sigmas (size = 2 ceil(k sigma) + 1)",
       [](PipelineConfig& c) -> double& { return c.bank.size_rule.sigmas_per_side; });
  flag("frangi", "gamma_normalize", "Multiply second derivatives by sigma^2",
       [](PipelineConfig& c) -> bool& { return c.bank.gamma_normalize; });
  real("frangi", "beta", "Blobness sensitivity", [](PipelineConfig& c) -> double& { return c.beta; });
  real("frangi", "c", "Structureness sensitivity", [](PipelineConfig& c) -> double& { return c.c; });
  b.push_back({{"frangi", "polarity", "dark (dark vessels on bright background) | bright"},
               [](PipelineConfig& c, const std::string& v) {
                 if (v == "dark") c.polarity = Polarity::kDarkOnBright;
                 else if (v == "bright") c.polarity = Polarity::kBrightOnDark;
                 else throw ConfigError("[frangi] polarity: expected dark or bright, got '" + v + "'");
               },
               [](const PipelineConfig& c) { return c.polarity == Polarity::kDarkOnBright ? "dark" : "bright"; }});

  integer("guided_filter", "radius", "Box window radius", [](PipelineConfig& c) -> int& { return c.gf.filter.radius; });
  real("guided_filter", "epsilon", "Regularization of var(I)", [](PipelineConfig& c) -> double& { return c.gf.filter.epsilon; });
  integer("guided_filter", "can_width", "Guidance network channels", [](PipelineConfig& c) -> int& { return c.gf.can.width; });
  b.push_back({{"guided_filter", "can_dilations", "Five comma-separated dilations"},
               [](PipelineConfig& c, const std::string& v) {
                 const auto items = split_list(v);
                 if (items.size() != c.gf.can.dilations.size()) {
                   throw ConfigError("[guided_filter] can_dilations: expected 5 values");
                 }
                 for (std::size_t i = 0; i < items.size(); ++i) {
                   c.gf.can.dilations[i] = static_cast<int>(to_integer(items[i], "[guided_filter] can_dilations"));
                   if (c.gf.can.dilations[i] < 1) throw ConfigError("[guided_filter] can_dilations: must be >= 1");
                 }
               },
               [](const PipelineConfig& c) { return fmt::format("{}", fmt::join(c.gf.can.dilations, ", ")); }});
  real("guided_filter", "can_slope", "Leaky ReLU slope of the guidance network",
       [](PipelineConfig& c) -> double& { return c.gf.can.slope; });
  integer("guided_filter", "extractor_width", "Feature extractor hidden channels",
          [](PipelineConfig& c) -> int& { return c.gf.extractor_width; });
  real("guided_filter", "extractor_slope", "Feature extractor leaky ReLU slope",
       [](PipelineConfig& c) -> double& { return c.gf.extractor_slope; });

  integer("unet", "levels", "Encoder levels", [](PipelineConfig& c) -> int& { return c.unet.levels; });
  integer("unet", "features", "Channels at the first level", [](PipelineConfig& c) -> int& { return c.unet.init_features; });
  flag("unet", "use_norm", "Batch normalization after each 3x3 convolution",
       [](PipelineConfig& c) -> bool& { return c.unet.use_norm; });
  real("unet", "norm_momentum", "Running-statistics momentum", [](PipelineConfig& c) -> double& { return c.unet.norm_momentum; });
  real("unet", "norm_epsilon", "Variance guard", [](PipelineConfig& c) -> double& { return c.unet.norm_epsilon; });

  real("loss", "gamma", "Focal focusing factor", [](PipelineConfig& c) -> double& { return c.loss.gamma; });
  real("loss", "lambda_w", "Weight regularizer scale", [](PipelineConfig& c) -> double& { return c.loss.lambda_w; });
  real("loss", "lambda_s", "Similarity regularizer scale", [](PipelineConfig& c) -> double& { return c.loss.lambda_s; });
  flag("loss", "use_rw", "Enable the L2 weight regularizer", [](PipelineConfig& c) -> bool& { return c.loss.use_rw; });
  flag("loss", "use_rs", "Enable the similarity regularizer", [](PipelineConfig& c) -> bool& { return c.loss.use_rs; });
  b.push_back({{"loss", "class_balance", "auto (inverse batch frequency) | fixed"},
               [](PipelineConfig& c, const std::string& v) {
                 if (v == "auto") c.loss.balance = ClassBalance::kAutoFromBatch;
                 else if (v == "fixed") c.loss.balance = ClassBalance::kFixed;
                 else throw ConfigError("[loss] class_balance: expected auto or fixed, got '" + v + "'");
               },
               [](const PipelineConfig& c) { return c.loss.balance == ClassBalance::kFixed ? "fixed" : "auto"; }});
  real("loss", "pos_weight", "Vessel weight in fixed mode", [](PipelineConfig& c) -> double& { return c.loss.pos_weight; });
  real("loss", "neg_weight", "Background weight in fixed mode", [](PipelineConfig& c) -> double& { return c.loss.neg_weight; });
  real("loss", "log_epsilon", "Guard inside the logarithm", [](PipelineConfig& c) -> double& { return c.loss.log_epsilon; });

  real("optimizer", "lr0", "Initial learning rate", [](PipelineConfig& c) -> double& { return c.train.optimizer.lr0; });
  real("optimizer", "decay", "Learning-rate factor per step", [](PipelineConfig& c) -> double& { return c.train.optimizer.decay; });
  real("optimizer", "beta1", "Adam first-moment decay", [](PipelineConfig& c) -> double& { return c.train.optimizer.beta1; });
  real("optimizer", "beta2", "Adam second-moment decay", [](PipelineConfig& c) -> double& { return c.train.optimizer.beta2; });
  real("optimizer", "epsilon", "Adam denominator guard", [](PipelineConfig& c) -> double& { return c.train.optimizer.epsilon; });

  integer("train", "steps", "Optimizer steps", [](PipelineConfig& c) -> int& { return c.train.steps; });
  integer("train", "batch", "Patches per step", [](PipelineConfig& c) -> int& { return c.train.batch; });
  integer("train", "patch", "Patch side in px", [](PipelineConfig& c) -> int& { return c.train.patch; });
  integer("train", "val_every", "Validation interval in steps", [](PipelineConfig& c) -> int& { return c.train.val_every; });
  real("train", "rotation_min", "Rotation range lower bound (degrees)", [](PipelineConfig& c) -> double& { return c.train.augment.rotation_deg.lo; });
  real("train", "rotation_max", "Rotation range upper bound (degrees)", [](PipelineConfig& c) -> double& { return c.train.augment.rotation_deg.hi; });
  real("train", "shear_min", "Shear range lower bound", [](PipelineConfig& c) -> double& { return c.train.augment.shear.lo; });
  real("train", "shear_max", "Shear range upper bound", [](PipelineConfig& c) -> double& { return c.train.augment.shear.hi; });
  real("train", "noise_sigma", "Additive Gaussian noise", [](PipelineConfig& c) -> double& { return c.train.augment.noise_sigma; });
  real("train", "shift_min", "Intensity shift lower bound", [](PipelineConfig& c) -> double& { return c.train.augment.intensity_shift.lo; });
  real("train", "shift_max", "Intensity shift upper bound", [](PipelineConfig& c) -> double& { return c.train.augment.intensity_shift.hi; });

  integer("data", "suite_size", "Phantom images (split 40/10/50)", [](PipelineConfig& c) -> int& { return c.data.suite_size; });
  seed("data", "suite_seed", "Seed of the first phantom", [](PipelineConfig& c) -> std::uint64_t& { return c.data.suite_seed; });
  flag("data", "clahe", "Apply CLAHE to inputs", [](PipelineConfig& c) -> bool& { return c.data.clahe; });
  integer("data", "clahe_tiles", "CLAHE tiles per axis", [](PipelineConfig& c) -> int& { return c.data.clahe_cfg.tiles_x; });
  real("data", "clahe_clip", "CLAHE clip limit", [](PipelineConfig& c) -> double& { return c.data.clahe_cfg.clip_limit; });
  integer("data", "fov_erosion", "Evaluation FOV erosion in px", [](PipelineConfig& c) -> int& { return c.data.fov_erosion; });
  real("data", "weight_alpha", "alpha of the thin-vessel weight map", [](PipelineConfig& c) -> double& { return c.data.weight_alpha; });

  integer("phantom", "height", "Image height", [](PipelineConfig& c) -> int& { return c.data.phantom.height; });
  integer("phantom", "width", "Image width", [](PipelineConfig& c) -> int& { return c.data.phantom.width; });
  integer("phantom", "n_trees", "Vessel trees", [](PipelineConfig& c) -> int& { return c.data.phantom.n_trees; });
  real("phantom", "diameter_min", "Smallest diameter in px", [](PipelineConfig& c) -> double& { return c.data.phantom.diameter_min; });
  real("phantom", "diameter_max", "Largest diameter in px", [](PipelineConfig& c) -> double& { return c.data.phantom.diameter_max; });
  real("phantom", "taper", "Diameter factor per step", [](PipelineConfig& c) -> double& { return c.data.phantom.taper; });
  real("phantom", "step", "Random-walk step in px", [](PipelineConfig& c) -> double& { return c.data.phantom.step; });
  real("phantom", "tortuosity", "Heading noise per step (rad)", [](PipelineConfig& c) -> double& { return c.data.phantom.tortuosity; });
  real("phantom", "branch_probability", "Branching probability per step", [](PipelineConfig& c) -> double& { return c.data.phantom.branch_probability; });
  real("phantom", "base_intensity", "Background level", [](PipelineConfig& c) -> double& { return c.data.phantom.base_intensity; });
  real("phantom", "background", "Illumination amplitude", [](PipelineConfig& c) -> double& { return c.data.phantom.background; });
  integer("phantom", "background_max_frequency", "Highest illumination frequency (cycles per image)",
          [](PipelineConfig& c) -> int& { return c.data.phantom.background_max_frequency; });
  real("phantom", "vignette", "Darkening at the FOV border", [](PipelineConfig& c) -> double& { return c.data.phantom.vignette; });
  real("phantom", "fov_radius", "FOV radius as a fraction of min(H, W)", [](PipelineConfig& c) -> double& { return c.data.phantom.fov_radius; });
  real("phantom", "contrast_min", "Smallest vessel intensity drop", [](PipelineConfig& c) -> double& { return c.data.phantom.contrast_min; });
  real("phantom", "contrast_max", "Largest vessel intensity drop", [](PipelineConfig& c) -> double& { return c.data.phantom.contrast_max; });
  real("phantom", "noise_sigma", "Additive noise", [](PipelineConfig& c) -> double& { return c.data.phantom.noise_sigma; });
  return b;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = make_bindings();
  return b;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& b : bindings()) k.push_back(b.key);
    return k;
  }();
  return keys;
}

PipelineConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  if (auto row = tree.get_optional<std::string>("pipeline.row")) cfg = preset(*row);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) {
      const auto& all = bindings();
      auto it = std::find_if(all.begin(), all.end(),
                             [&](const Binding& b) { return b.key.section == section && b.key.key == key; });
      if (it == all.end()) throw ConfigError("config: unknown key " + where(section, key));
      it->set(cfg, value.data());
    }
  }
  cfg.data.clahe_cfg.tiles_y = cfg.data.clahe_cfg.tiles_x;
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& b : bindings()) {
    if (b.key.section != section) {
      section = b.key.section;
      out += (out.empty() ? "" : "\n") + ("[" + section + "]\n");
    }
    if (b.key.section == "pipeline" && b.key.key == "row") continue;
    out += fmt::format("{} = {}\n", b.key.key, b.get(cfg));
  }
  return out;
}

}  // namespace vk
