// SPDX-License-Identifier: Apache-2.0
#include "normprop/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "normprop/activation.hpp"
#include "normprop/errors.hpp"

namespace normprop {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(trim(cell));
  return out;
}

int parse_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse integer '" + s + "' for " + key);
  }
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse number '" + s + "' for " + key);
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// derivation streams for seeds consumed at different places
constexpr std::uint64_t kStreamInit = 0x696e6974;   // weight init
constexpr std::uint64_t kStreamTrainData = 0x7472;  // synth train set
constexpr std::uint64_t kStreamEvalData = 0x6576;   // synth eval set
constexpr std::uint64_t kStreamStats = 0x7374;      // monte-carlo stats

}  // namespace

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::normprop: return "normprop";
    case NormKind::batchnorm: return "batchnorm";
    case NormKind::plain: return "plain";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& token) {
  if (token == "normprop") return NormKind::normprop;
  if (token == "batchnorm") return NormKind::batchnorm;
  if (token == "plain" || token == "none") return NormKind::plain;
  throw ConfigError("unknown normalization '" + token + "' (want normprop|batchnorm|none)");
}

std::string to_string(DataNormMode m) {
  return m == DataNormMode::global ? "global" : "batch";
}

DataNormMode parse_data_norm(const std::string& token) {
  if (token == "global") return DataNormMode::global;
  if (token == "batch") return DataNormMode::batch;
  throw ConfigError("unknown data normalization '" + token + "' (want global|batch)");
}

kernels::PoolMode parse_pool_mode(const std::string& token) {
  if (token == "max") return kernels::PoolMode::max;
  if (token == "avg") return kernels::PoolMode::avg;
  throw ConfigError("unknown pool mode '" + token + "' (want max|avg)");
}

LayerSpec LayerSpec::parse(const std::string& text) {
  std::string body = trim(text);
  std::optional<NormKind> norm;
  // optional :norm suffix after the closing paren
  const std::size_t close = body.rfind(')');
  if (close == std::string::npos) throw ConfigError("malformed layer spec '" + text + "'");
  if (close + 1 < body.size()) {
    std::string suffix = trim(body.substr(close + 1));
    if (suffix.empty() || suffix[0] != ':') {
      throw ConfigError("malformed layer spec '" + text + "'");
    }
    norm = parse_norm_kind(trim(suffix.substr(1)));
    body = trim(body.substr(0, close + 1));
  }
  const std::size_t open = body.find('(');
  if (open == std::string::npos || body.back() != ')') {
    throw ConfigError("malformed layer spec '" + text + "'");
  }
  const std::string head = trim(body.substr(0, open));
  const std::vector<std::string> args = split(body.substr(open + 1, body.size() - open - 2), ',');
  LayerSpec spec;
  spec.norm = norm;
  if (head == "D") {
    if (args.size() != 1) throw ConfigError("dense layer wants D(units): '" + text + "'");
    spec.kind = Kind::dense;
    spec.units = parse_int(args[0], "layer");
    if (spec.units < 1) throw ConfigError("dense units must be >= 1 in '" + text + "'");
  } else if (head == "C") {
    if (args.size() != 4) {
      throw ConfigError("conv layer wants C(filters,size,stride,pad): '" + text + "'");
    }
    spec.kind = Kind::conv;
    spec.filters = parse_int(args[0], "layer");
    spec.size = parse_int(args[1], "layer");
    spec.stride = parse_int(args[2], "layer");
    spec.pad = parse_int(args[3], "layer");
    if (spec.filters < 1 || spec.size < 1 || spec.stride < 1 || spec.pad < 0) {
      throw ConfigError("bad conv parameters in '" + text + "'");
    }
  } else if (head == "P") {
    if (args.size() != 4) {
      throw ConfigError("pool layer wants P(kernel,stride,pad,mode): '" + text + "'");
    }
    spec.kind = Kind::pool;
    spec.kernel = parse_int(args[0], "layer");
    spec.stride = parse_int(args[1], "layer");
    spec.pad = parse_int(args[2], "layer");
    spec.pool_mode = parse_pool_mode(args[3]);
    if (spec.kernel < 1 || spec.stride < 1 || spec.pad < 0) {
      throw ConfigError("bad pool parameters in '" + text + "'");
    }
  } else {
    throw ConfigError("unknown layer type '" + head + "' in '" + text + "'");
  }
  return spec;
}

std::string LayerSpec::render() const {
  std::string s;
  switch (kind) {
    case Kind::dense:
      s = "D(" + std::to_string(units) + ")";
      break;
    case Kind::conv:
      s = "C(" + std::to_string(filters) + "," + std::to_string(size) + "," +
          std::to_string(stride) + "," + std::to_string(pad) + ")";
      break;
    case Kind::pool:
      s = "P(" + std::to_string(kernel) + "," + std::to_string(stride) + "," +
          std::to_string(pad) + "," + (pool_mode == kernels::PoolMode::max ? "max" : "avg") + ")";
      break;
  }
  if (norm) s += ":" + to_string(*norm);
  return s;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "layer") {
      cfg.layers.push_back(LayerSpec::parse(value));
    } else if (key == "norm") {
      cfg.norm = parse_norm_kind(value);
    } else if (key == "data_norm") {
      cfg.data_norm = parse_data_norm(value);
    } else if (key == "act") {
      cfg.act = value;
      cfg.activation();  // validate the token now
    } else if (key == "gamma_init") {
      if (value == "jacobian") cfg.gamma_init = GammaInit::jacobian;
      else if (value == "one") cfg.gamma_init = GammaInit::one;
      else throw ConfigError("gamma_init must be jacobian|one, got '" + value + "'");
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "batch_size") {
      cfg.batch_size = parse_int(value, key);
    } else if (key == "epochs") {
      cfg.epochs = parse_int(value, key);
    } else if (key == "halve_every") {
      cfg.halve_every = parse_int(value, key);
    } else if (key == "lr") {
      cfg.lr = parse_double(value, key);
    } else if (key == "momentum") {
      cfg.momentum = parse_double(value, key);
    } else if (key == "weight_decay") {
      cfg.weight_decay = parse_double(value, key);
    } else if (key == "running_decay") {
      cfg.running_decay = parse_double(value, key);
    } else if (key == "constrain_output") {
      cfg.constrain_output = value == "1" || value == "true";
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "data") {
      if (value != "synth" && value != "idx" && value != "csv" && value != "cifar10") {
        throw ConfigError("data must be synth|idx|csv|cifar10, got '" + value + "'");
      }
      cfg.data = value;
    } else if (key == "synth_task") {
      if (value != "two_class" && value != "mixture") {
        throw ConfigError("synth_task must be two_class|mixture, got '" + value + "'");
      }
      cfg.synth_task = value;
    } else if (key == "synth_n") {
      cfg.synth_n = parse_int(value, key);
    } else if (key == "synth_dim") {
      cfg.synth_dim = parse_int(value, key);
    } else if (key == "synth_classes") {
      cfg.synth_classes = parse_int(value, key);
    } else if (key == "eval_n") {
      cfg.eval_n = parse_int(value, key);
    } else if (key == "data_shape") {
      cfg.data_shape.clear();
      if (!value.empty()) {
        for (const std::string& d : split(value, ',')) {
          const int v = parse_int(d, key);
          if (v < 1) throw ConfigError("data_shape extents must be positive");
          cfg.data_shape.push_back(static_cast<std::size_t>(v));
        }
      }
    } else if (key == "data_images") {
      cfg.data_images = value;
    } else if (key == "data_labels") {
      cfg.data_labels = value;
    } else if (key == "eval_images") {
      cfg.eval_images = value;
    } else if (key == "eval_labels") {
      cfg.eval_labels = value;
    } else if (key == "data_path") {
      cfg.data_path = value;
    } else if (key == "label_column") {
      cfg.label_column = value;
    } else {
      throw ConfigError("unknown config key '" + key + "' at line " + std::to_string(lineno));
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

std::string ExperimentConfig::render() const {
  std::ostringstream os;
  os << "seed=" << seed << "\n";
  os << "epochs=" << epochs << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "lr=" << fmt_double(lr) << "\n";
  os << "momentum=" << fmt_double(momentum) << "\n";
  os << "weight_decay=" << fmt_double(weight_decay) << "\n";
  os << "halve_every=" << halve_every << "\n";
  os << "running_decay=" << fmt_double(running_decay) << "\n";
  os << "norm=" << to_string(norm) << "\n";
  os << "data_norm=" << to_string(data_norm) << "\n";
  os << "act=" << act << "\n";
  os << "gamma_init=" << (gamma_init == GammaInit::jacobian ? "jacobian" : "one") << "\n";
  os << "constrain_output=" << (constrain_output ? 1 : 0) << "\n";
  os << "out=" << out_dir << "\n";
  os << "data=" << data << "\n";
  if (data == "synth") {
    os << "synth_task=" << synth_task << "\n";
    os << "synth_n=" << synth_n << "\n";
    os << "synth_dim=" << synth_dim << "\n";
    os << "synth_classes=" << synth_classes << "\n";
    os << "eval_n=" << eval_n << "\n";
  }
  if (!data_shape.empty()) {
    os << "data_shape=";
    for (std::size_t i = 0; i < data_shape.size(); ++i) {
      if (i) os << ',';
      os << data_shape[i];
    }
    os << "\n";
  }
  if (!data_images.empty()) os << "data_images=" << data_images << "\n";
  if (!data_labels.empty()) os << "data_labels=" << data_labels << "\n";
  if (!eval_images.empty()) os << "eval_images=" << eval_images << "\n";
  if (!eval_labels.empty()) os << "eval_labels=" << eval_labels << "\n";
  if (!data_path.empty()) os << "data_path=" << data_path << "\n";
  if (data == "csv") os << "label_column=" << label_column << "\n";
  for (const LayerSpec& layer : layers) os << "layer=" << layer.render() << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string text = render();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ExperimentConfig::validate() const {
  if (layers.empty()) throw ConfigError("config declares no layers");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (halve_every < 1) throw ConfigError("halve_every must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
  if (running_decay <= 0 || running_decay >= 1) throw ConfigError("running_decay must be in (0,1)");
  auto need_file = [](const std::string& path, const std::string& key) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      throw ConfigError(key + " file does not exist: " + path);
    }
  };
  if (data == "idx") {
    if (data_images.empty()) throw ConfigError("data=idx needs data_images");
    need_file(data_images, "data_images");
    need_file(data_labels, "data_labels");
    need_file(eval_images, "eval_images");
    need_file(eval_labels, "eval_labels");
  } else if (data == "csv" || data == "cifar10") {
    if (data_path.empty()) throw ConfigError("data=" + data + " needs data_path");
    need_file(data_path, "data_path");
  }
  bool have_weighted = false;
  for (const LayerSpec& l : layers) {
    if (l.kind != LayerSpec::Kind::pool) have_weighted = true;
  }
  if (!have_weighted) throw ConfigError("architecture has no weighted layer");
  resolved_norms();
  activation();
}

Activation ExperimentConfig::activation() const {
  if (act == "relu") return Activation::relu();
  if (act == "tanh") return Activation::tanh_act();
  if (act == "identity") return Activation::identity();
  if (act.rfind("prelu(", 0) == 0 && act.back() == ')') {
    const std::string inner = act.substr(6, act.size() - 7);
    return Activation::prelu(static_cast<real>(parse_double(inner, "act")));
  }
  throw ConfigError("unknown activation '" + act + "' (want relu|prelu(a)|tanh|identity)");
}

std::vector<NormKind> ExperimentConfig::resolved_norms() const {
  std::vector<NormKind> out(layers.size(), NormKind::plain);
  std::ptrdiff_t last_weighted = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerSpec::Kind::pool) last_weighted = static_cast<std::ptrdiff_t>(i);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerSpec::Kind::pool) continue;
    if (layers[i].norm) {
      out[i] = *layers[i].norm;
    } else if (static_cast<std::ptrdiff_t>(i) == last_weighted) {
      out[i] = NormKind::plain;  // classifier head
    } else {
      out[i] = norm;
    }
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerSpec::Kind::conv && out[i] == NormKind::batchnorm) {
      throw ConfigError("batchnorm conv layers are not supported; use normprop or plain");
    }
  }
  return out;
}

Network build_network(const ExperimentConfig& cfg, const std::vector<std::size_t>& sample_shape,
                      int num_classes) {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  const std::vector<NormKind> norms = cfg.resolved_norms();
  const Activation act = cfg.activation();
  Rng init_rng = Rng(cfg.seed).derive(kStreamInit);
  const ActivationStats stats = stats_for(act, 1000000, Rng(cfg.seed).derive(kStreamStats).seed());

  real gamma0 = 1;
  if (cfg.gamma_init == GammaInit::jacobian) {
    if (act.kind == Activation::Kind::relu) {
      gamma0 = static_cast<real>(kReluGammaInit);  // the literal 1/1.21
    } else {
      gamma0 = 1 / jacobian_factor(act, stats, 1000000,
                                   Rng(cfg.seed).derive(kStreamStats + 1).seed());
    }
  }

  std::ptrdiff_t last_weighted = -1;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind != LayerSpec::Kind::pool) {
      last_weighted = static_cast<std::ptrdiff_t>(i);
    }
  }

  Network net;
  std::vector<std::size_t> shape = sample_shape;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& spec = cfg.layers[i];
    const bool is_head = static_cast<std::ptrdiff_t>(i) == last_weighted;
    // the resolved-plain head is a linear logits layer
    const Activation layer_act =
        (is_head && norms[i] == NormKind::plain && !spec.norm) ? Activation::identity() : act;
    switch (spec.kind) {
      case LayerSpec::Kind::dense: {
        std::size_t in_dim = 1;
        for (std::size_t d : shape) in_dim *= d;
        const std::size_t units = static_cast<std::size_t>(spec.units);
        Tensor w = init_weights({units, in_dim}, init_rng);
        switch (norms[i]) {
          case NormKind::normprop:
            net.add(std::make_unique<NormPropDense>(std::move(w), stats, layer_act, gamma0));
            break;
          case NormKind::batchnorm:
            net.add(std::make_unique<BatchNormDense>(std::move(w), layer_act,
                                                     static_cast<real>(cfg.running_decay)));
            break;
          case NormKind::plain:
            net.add(std::make_unique<PlainDense>(std::move(w), layer_act));
            break;
        }
        shape = {units};
        break;
      }
      case LayerSpec::Kind::conv: {
        if (shape.size() != 3) {
          throw ConfigError("conv layer " + std::to_string(i) +
                            " needs [d,L,B] input; set data_shape for flat data");
        }
        Tensor w = init_weights({static_cast<std::size_t>(spec.filters), shape[0],
                                 static_cast<std::size_t>(spec.size),
                                 static_cast<std::size_t>(spec.size)},
                                init_rng);
        std::unique_ptr<Layer> layer;
        if (norms[i] == NormKind::normprop) {
          layer = std::make_unique<NormPropConv>(std::move(w), spec.stride, spec.pad, stats,
                                                 layer_act, gamma0);
        } else {
          layer = std::make_unique<PlainConv>(std::move(w), spec.stride, spec.pad, layer_act);
        }
        shape = layer->output_sample_shape(shape);
        net.add(std::move(layer));
        break;
      }
      case LayerSpec::Kind::pool: {
        if (shape.size() != 3) {
          throw ConfigError("pool layer " + std::to_string(i) + " needs [m,L,B] input");
        }
        auto layer = std::make_unique<PoolLayer>(spec.kernel, spec.stride, spec.pad,
                                                 spec.pool_mode);
        shape = layer->output_sample_shape(shape);
        net.add(std::move(layer));
        break;
      }
    }
  }
  std::size_t out_dim = 1;
  for (std::size_t d : shape) out_dim *= d;
  if (out_dim != static_cast<std::size_t>(num_classes)) {
    throw ConfigError("network output width " + std::to_string(out_dim) + " != class count " +
                      std::to_string(num_classes));
  }
  return net;
}

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  Dataset train_set, eval_set;
  if (cfg.data == "synth") {
    const SynthTask task =
        cfg.synth_task == "two_class" ? SynthTask::two_class_linear : SynthTask::k_class_mixture;
    train_set = synth_gaussian(static_cast<std::size_t>(cfg.synth_n),
                               static_cast<std::size_t>(cfg.synth_dim),
                               Rng(cfg.seed).derive(kStreamTrainData).seed(), task,
                               cfg.synth_classes);
    eval_set = synth_gaussian(static_cast<std::size_t>(cfg.eval_n),
                              static_cast<std::size_t>(cfg.synth_dim),
                              Rng(cfg.seed).derive(kStreamEvalData).seed(), task,
                              cfg.synth_classes);
  } else if (cfg.data == "idx") {
    train_set = load_idx(cfg.data_images, cfg.data_labels);
    eval_set = cfg.eval_images.empty() ? Dataset{} : load_idx(cfg.eval_images, cfg.eval_labels);
  } else if (cfg.data == "csv") {
    train_set = load_csv(cfg.data_path, cfg.label_column);
  } else if (cfg.data == "cifar10") {
    train_set = load_cifar10(cfg.data_path);
  } else {
    throw ConfigError("unknown data source '" + cfg.data + "'");
  }
  if (!cfg.data_shape.empty()) {
    std::size_t prod = 1;
    for (std::size_t d : cfg.data_shape) prod *= d;
    if (prod != train_set.feature_dim()) {
      throw ConfigError("data_shape does not match feature count " +
                        std::to_string(train_set.feature_dim()));
    }
    train_set.sample_shape = cfg.data_shape;
    if (eval_set.size() > 0) eval_set.sample_shape = cfg.data_shape;
  }
  return {std::move(train_set), std::move(eval_set)};
}

TrainOptions train_options(const ExperimentConfig& cfg) {
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.schedule = Schedule{static_cast<real>(cfg.lr), cfg.halve_every};
  opts.momentum = static_cast<real>(cfg.momentum);
  opts.weight_decay = static_cast<real>(cfg.weight_decay);
  opts.data_norm = cfg.data_norm;
  opts.running_decay = static_cast<real>(cfg.running_decay);
  opts.seed = cfg.seed;
  opts.constrain_output_layer = cfg.constrain_output;
  opts.out_dir = cfg.out_dir;
  return opts;
}

}  // namespace normprop
