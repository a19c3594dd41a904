// SPDX-License-Identifier: Apache-2.0
#include "normprop/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "normprop/activation.hpp"
#include "normprop/analysis.hpp"
#include "normprop/config.hpp"
#include "normprop/csv.hpp"
#include "normprop/errors.hpp"
#include "normprop/train.hpp"

namespace normprop::cli {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Activation parse_activation(const std::string& name, double a) {
  if (name == "relu") return Activation::relu();
  if (name == "prelu") return Activation::prelu(static_cast<real>(a));
  if (name == "tanh") return Activation::tanh_act();
  if (name == "identity") return Activation::identity();
  throw ConfigError("unknown activation '" + name + "' (want relu|prelu|tanh|identity)");
}

Tensor load_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read weights file " + path);
  std::vector<real> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(static_cast<real>(std::stod(cell)));
      } catch (const std::exception&) {
        throw FormatError(path + ": line " + std::to_string(lineno) + ": cannot parse '" + cell +
                          "'");
      }
      ++c;
    }
    if (rows == 0) {
      cols = c;
    } else if (c != cols) {
      throw FormatError(path + ": line " + std::to_string(lineno) + ": expected " +
                        std::to_string(cols) + " columns, got " + std::to_string(c));
    }
    ++rows;
  }
  if (rows == 0 || cols == 0) throw FormatError(path + ": no numeric rows");
  return Tensor({rows, cols}, std::move(values));
}

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(rng.normal());
  return t;
}

std::string out_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  std::filesystem::create_directories(dir);
  return dir + "/" + name;
}

}  // namespace

int run_stats(const StatsArgs& args, std::ostream& console) {
  const Activation act = parse_activation(args.act, args.a);
  const bool analytic = act.has_analytic_stats();
  ActivationStats exact;
  double jf_exact = 0;
  if (analytic) {
    exact = stats_for(act, args.mc, args.seed);
    jf_exact = jacobian_factor(act, exact, args.mc, mix64(args.seed ^ 0x6a66));
  }
  const ActivationStats mc = monte_carlo_stats(act, args.mc, args.seed);
  const double jf_mc = jacobian_factor_mc(act, mc, args.mc, mix64(args.seed ^ 0x6a66));

  console << "activation: " << act.name() << "\n";
  console << std::left << std::setw(14) << "source" << std::setw(14) << "c2" << std::setw(14)
          << "c1" << std::setw(16) << "jacobian_factor" << "\n";
  auto line = [&](const char* src, double c2, double c1, double jf) {
    console << std::left << std::setw(14) << src << std::setw(14) << std::setprecision(6) << c2
            << std::setw(14) << c1 << std::setw(16) << jf << "\n";
  };
  if (analytic) line("analytic", exact.c2, exact.c1, jf_exact);
  line("monte_carlo", mc.c2, mc.c1, jf_mc);
  if (analytic) {
    line("|diff|", std::fabs(exact.c2 - mc.c2), std::fabs(exact.c1 - mc.c1),
         std::fabs(jf_exact - jf_mc));
  }
  console << "samples: " << args.mc << "\n";

  if (!args.out.empty()) {
    std::ostringstream key;
    key << "stats act=" << act.name() << " mc=" << args.mc;
    CsvWriter csv(args.out, fnv1a(key.str()), args.seed,
                  {"source", "c2", "c1", "jacobian_factor", "samples"});
    if (analytic) {
      csv.row({"analytic", csv_num(static_cast<double>(exact.c2)),
               csv_num(static_cast<double>(exact.c1)), csv_num(jf_exact), "0"});
    }
    csv.row({"monte_carlo", csv_num(static_cast<double>(mc.c2)),
             csv_num(static_cast<double>(mc.c1)), csv_num(jf_mc), std::to_string(args.mc)});
    if (analytic) {
      csv.row({"abs_diff", csv_num(std::fabs(static_cast<double>(exact.c2 - mc.c2))),
               csv_num(std::fabs(static_cast<double>(exact.c1 - mc.c1))),
               csv_num(std::fabs(jf_exact - jf_mc)), std::to_string(args.mc)});
    }
  }
  return 0;
}

int run_bound(const BoundArgs& args, std::ostream& console) {
  Tensor w;
  if (!args.weights_file.empty()) {
    w = load_matrix_csv(args.weights_file);
  } else {
    Rng wrng = Rng(args.seed).derive(0x57);  // 'W'
    w = gaussian_matrix(static_cast<std::size_t>(args.m), static_cast<std::size_t>(args.n), wrng);
  }
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (args.samples < 100) throw ConfigError("need at least 100 samples");

  Rng xrng = Rng(args.seed).derive(0x78);  // 'x'
  Tensor x({args.samples, n});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<real>(args.sigma * xrng.normal());
  }
  const Tensor u = kernels::matmul_nt(x, w);
  const CovarianceReport rep = canonical_gap(u, w, static_cast<real>(args.sigma), true);
  const double tolerance = 3.0 * static_cast<double>(m) / std::sqrt(static_cast<double>(args.samples));
  const bool within = rep.gap <= rep.bound + tolerance;

  console << "W " << w.shape_str() << "  sigma=" << args.sigma << "  samples=" << args.samples
          << "\n";
  console << "coherence        " << rep.coherence << "\n";
  console << "bound            " << rep.bound << "\n";
  console << "gap(alpha*)      " << rep.gap << "\n";
  console << "gap(diag(Sigma)) " << rep.gap_empirical << "\n";
  console << "gap <= bound + 3m/sqrt(N): " << (within ? "yes" : "no") << "\n";

  if (!args.out.empty()) {
    std::ostringstream key;
    key << "bound m=" << m << " n=" << n << " samples=" << args.samples << " sigma=" << args.sigma;
    CsvWriter csv(args.out, fnv1a(key.str()), args.seed,
                  {"m", "n", "sigma", "samples", "coherence", "bound", "gap",
                   "gap_empirical_diag", "within_bound"});
    csv.row({std::to_string(m), std::to_string(n), csv_num(args.sigma),
             std::to_string(args.samples), csv_num(static_cast<double>(rep.coherence)),
             csv_num(static_cast<double>(rep.bound)), csv_num(static_cast<double>(rep.gap)),
             csv_num(static_cast<double>(rep.gap_empirical)), within ? "1" : "0"});
  }
  return 0;
}

int run_jacobian(const JacobianArgs& args, std::ostream& console) {
  if (args.m < 2 || args.n < static_cast<int>(args.m)) {
    throw ConfigError("jacobian probe needs 2 <= m <= n");
  }
  Rng wrng = Rng(args.seed).derive(0x57);
  const Tensor w = random_orthonormal_rows(static_cast<std::size_t>(args.m),
                                           static_cast<std::size_t>(args.n), wrng);
  Rng xrng = Rng(args.seed).derive(0x78);
  Tensor x({args.samples, static_cast<std::size_t>(args.n)});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<real>(xrng.normal());

  std::optional<CsvWriter> csv;
  if (!args.out.empty()) {
    std::ostringstream key;
    key << "jacobian m=" << args.m << " n=" << args.n << " samples=" << args.samples;
    csv.emplace(args.out, fnv1a(key.str()), args.seed,
                std::vector<std::string>{"gamma", "diag_mean", "offdiag_max", "sv_min", "sv_mean",
                                         "sv_max"});
  }

  for (const double gamma : {1.0, kReluGammaInit}) {
    NormPropDense layer(w, relu_stats(), Activation::relu(), static_cast<real>(gamma));
    const JacobianProbe probe = jacobian_probe(layer, x);
    const std::size_t m = probe.mean_jjt.dim(0);
    double diag_sum = 0, off_max = 0;
    for (std::size_t i = 0; i < m; ++i) {
      diag_sum += probe.mean_jjt(i, i);
      for (std::size_t j = 0; j < m; ++j) {
        if (i != j) off_max = std::max(off_max, std::fabs(double(probe.mean_jjt(i, j))));
      }
    }
    const double diag_mean = diag_sum / static_cast<double>(m);
    double sv_min = probe.singular_values[0], sv_max = probe.singular_values[m - 1], sv_sum = 0;
    for (std::size_t i = 0; i < m; ++i) sv_sum += probe.singular_values[i];
    const double sv_mean = sv_sum / static_cast<double>(m);

    console << "gamma=" << gamma << "  diag_mean=" << diag_mean << "  offdiag_max=" << off_max
            << "  singular_values=[" << sv_min << ", " << sv_mean << ", " << sv_max << "]\n";
    if (csv) {
      csv->row({csv_num(gamma), csv_num(diag_mean), csv_num(off_max), csv_num(double(sv_min)),
                csv_num(sv_mean), csv_num(double(sv_max))});
    }
  }
  return 0;
}

namespace {

ExperimentConfig load_config(const std::string& config_file) {
  if (config_file.empty()) throw ConfigError("a --config file is required");
  return ExperimentConfig::parse_file(config_file);
}

void write_metrics_csv(const std::string& path, const ExperimentConfig& cfg,
                       const std::vector<EpochMetrics>& history) {
  CsvWriter csv(path, cfg.hash(), cfg.seed,
                {"epoch", "lr", "train_loss", "train_acc", "eval_acc"});
  for (const EpochMetrics& row : history) {
    csv.row({std::to_string(row.epoch), csv_num(static_cast<double>(row.lr)),
             csv_num(static_cast<double>(row.train_loss)),
             csv_num(static_cast<double>(row.train_acc)),
             csv_num(static_cast<double>(row.eval_acc))});
  }
}

}  // namespace

int run_train(const TrainArgs& args, std::ostream& console) {
  ExperimentConfig cfg = load_config(args.config_file);
  if (args.norm) cfg.norm = parse_norm_kind(*args.norm);
  if (args.data_norm) cfg.data_norm = parse_data_norm(*args.data_norm);
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.seed) cfg.seed = *args.seed;
  if (args.out) cfg.out_dir = *args.out;
  cfg.validate();

  auto [train_set, eval_set] = load_datasets(cfg);
  Network net = build_network(cfg, train_set.sample_shape, train_set.num_classes);
  const TrainOptions opts = train_options(cfg);
  const TrainResult result = train(net, train_set, eval_set, opts);

  write_metrics_csv(out_path(cfg.out_dir, "metrics.csv"), cfg, result.history);
  console << "trained " << net.spec_string() << " for " << cfg.epochs << " epochs\n";
  console << "final eval accuracy " << result.final_eval_acc << "\n";
  console << "metrics: " << out_path(cfg.out_dir, "metrics.csv") << "\n";
  return 0;
}

int run_shift(const ShiftArgs& args, std::ostream& console) {
  ExperimentConfig base = load_config(args.config_file);
  if (args.epochs) base.epochs = *args.epochs;
  if (args.seed) base.seed = *args.seed;
  if (args.out) base.out_dir = *args.out;
  base.validate();

  auto [train_set, eval_set] = load_datasets(base);
  const std::size_t probe_n = std::min<std::size_t>(2048, eval_set.size());
  Tensor probe_raw({probe_n, eval_set.feature_dim()});
  std::copy(eval_set.features.data(), eval_set.features.data() + probe_n * eval_set.feature_dim(),
            probe_raw.data());
  if (eval_set.sample_shape.size() > 1) {
    std::vector<std::size_t> shaped{probe_n};
    shaped.insert(shaped.end(), eval_set.sample_shape.begin(), eval_set.sample_shape.end());
    probe_raw = probe_raw.reshaped(shaped);
  }
  const std::uint64_t unit_seed = Rng(base.seed).derive(0x756e6974).seed();  // fixed across variants

  // all three variants must be expressible before anything is written
  // (batchnorm only exists for dense layers)
  for (const NormKind variant : {NormKind::normprop, NormKind::batchnorm, NormKind::plain}) {
    ExperimentConfig cfg = base;
    cfg.norm = variant;
    cfg.resolved_norms();
  }

  for (const NormKind variant : {NormKind::normprop, NormKind::batchnorm, NormKind::plain}) {
    ExperimentConfig cfg = base;
    cfg.norm = variant;
    Network net = build_network(cfg, train_set.sample_shape, train_set.num_classes);
    ShiftMonitor monitor(net, probe_raw, unit_seed);
    TrainOptions opts = train_options(cfg);
    opts.out_dir.clear();  // traces only
    train(net, train_set, eval_set, opts,
          [&](int epoch, Network& n, const Tensor& probe) { monitor.observe(epoch, n, probe); });

    const std::string name = "shift_" + to_string(variant) + ".csv";
    CsvWriter csv(out_path(base.out_dir, name), cfg.hash(), cfg.seed,
                  {"layer", "unit", "epoch", "mean"});
    for (const ShiftTrace& trace : monitor.traces()) {
      for (const auto& [epoch, mean] : trace.means) {
        csv.row({std::to_string(trace.layer_index), std::to_string(trace.unit_index),
                 std::to_string(epoch), csv_num(mean)});
      }
    }
    console << to_string(variant) << ": " << out_path(base.out_dir, name) << "\n";
  }
  return 0;
}

int run_compare(const CompareArgs& args, std::ostream& console) {
  ExperimentConfig base = load_config(args.config_file);
  if (args.epochs) base.epochs = *args.epochs;
  if (args.seed) base.seed = *args.seed;
  if (args.out) base.out_dir = *args.out;
  base.validate();

  auto [train_set, eval_set] = load_datasets(base);
  std::vector<std::vector<EpochMetrics>> histories;
  for (const NormKind variant : {NormKind::normprop, NormKind::batchnorm}) {
    ExperimentConfig cfg = base;
    cfg.norm = variant;
    Network net = build_network(cfg, train_set.sample_shape, train_set.num_classes);
    TrainOptions opts = train_options(cfg);
    opts.out_dir.clear();
    histories.push_back(train(net, train_set, eval_set, opts).history);
  }

  const std::string path = out_path(base.out_dir, "compare.csv");
  CsvWriter csv(path, base.hash(), base.seed,
                {"epoch", "normprop_eval_acc", "batchnorm_eval_acc"});
  for (std::size_t e = 0; e < histories[0].size(); ++e) {
    csv.row({std::to_string(histories[0][e].epoch),
             csv_num(static_cast<double>(histories[0][e].eval_acc)),
             csv_num(static_cast<double>(histories[1][e].eval_acc))});
  }
  console << "compare: " << path << "\n";
  console << "terminal normprop=" << histories[0].back().eval_acc
          << " batchnorm=" << histories[1].back().eval_acc << "\n";
  return 0;
}

}  // namespace normprop::cli
