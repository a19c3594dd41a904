// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "normprop/cli.hpp"
#include "normprop/errors.hpp"

using namespace normprop;

int main(int argc, char** argv) {
  CLI::App app{"normprop: parametric hidden-layer normalization experiments"};
  app.require_subcommand(1);

  cli::StatsArgs stats_args;
  auto* stats = app.add_subcommand("stats", "activation constants, analytic vs Monte Carlo");
  stats->add_option("--act", stats_args.act, "relu|prelu|tanh|identity")->capture_default_str();
  stats->add_option("--a", stats_args.a, "prelu slope")->capture_default_str();
  stats->add_option("--mc", stats_args.mc, "Monte Carlo samples")->capture_default_str();
  stats->add_option("--seed", stats_args.seed, "rng seed")->capture_default_str();
  stats->add_option("--out", stats_args.out, "CSV output path");

  cli::BoundArgs bound_args;
  auto* bound = app.add_subcommand("bound", "canonical covariance bound and empirical gap");
  bound->add_option("--weights", bound_args.weights_file, "CSV weight matrix (rows = units)");
  bound->add_option("--m", bound_args.m, "random matrix rows")->capture_default_str();
  bound->add_option("--n", bound_args.n, "random matrix cols")->capture_default_str();
  bound->add_option("--samples", bound_args.samples, "input samples")->capture_default_str();
  bound->add_option("--sigma", bound_args.sigma, "input std")->capture_default_str();
  bound->add_option("--seed", bound_args.seed, "rng seed")->capture_default_str();
  bound->add_option("--out", bound_args.out, "CSV output path");

  cli::JacobianArgs jac_args;
  auto* jac = app.add_subcommand("jacobian", "hidden-layer Jacobian isometry probe");
  jac->add_option("--m", jac_args.m, "units")->capture_default_str();
  jac->add_option("--n", jac_args.n, "input dim (>= m)")->capture_default_str();
  jac->add_option("--samples", jac_args.samples, "probe samples")->capture_default_str();
  jac->add_option("--seed", jac_args.seed, "rng seed")->capture_default_str();
  jac->add_option("--out", jac_args.out, "CSV output path");

  cli::TrainArgs train_args;
  std::string train_norm, train_data_norm, train_out;
  int train_batch = -1, train_epochs = -1;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  auto* train = app.add_subcommand("train", "train a network per config file");
  train->add_option("--config", train_args.config_file, "config file")->required();
  train->add_option("--norm", train_norm, "normprop|batchnorm|none override");
  train->add_option("--data-norm", train_data_norm, "global|batch override");
  train->add_option("--batch-size", train_batch, "batch size override (>= 1)");
  train->add_option("--epochs", train_epochs, "epoch override");
  train->add_option("--seed", train_seed, "seed override")->each([&](const std::string&) {
    train_seed_set = true;
  });
  train->add_option("--out", train_out, "output directory override");

  cli::ShiftArgs shift_args;
  std::string shift_out;
  int shift_epochs = -1;
  std::uint64_t shift_seed = 0;
  bool shift_seed_set = false;
  auto* shift = app.add_subcommand("shift", "covariate-shift traces for all three variants");
  shift->add_option("--config", shift_args.config_file, "config file")->required();
  shift->add_option("--epochs", shift_epochs, "epoch override");
  shift->add_option("--seed", shift_seed, "seed override")->each([&](const std::string&) {
    shift_seed_set = true;
  });
  shift->add_option("--out", shift_out, "output directory override");

  cli::CompareArgs cmp_args;
  std::string cmp_out;
  int cmp_epochs = -1;
  std::uint64_t cmp_seed = 0;
  bool cmp_seed_set = false;
  auto* cmp = app.add_subcommand("compare", "matched-seed convergence: normprop vs batchnorm");
  cmp->add_option("--config", cmp_args.config_file, "config file")->required();
  cmp->add_option("--epochs", cmp_epochs, "epoch override");
  cmp->add_option("--seed", cmp_seed, "seed override")->each([&](const std::string&) {
    cmp_seed_set = true;
  });
  cmp->add_option("--out", cmp_out, "output directory override");

  CLI11_PARSE(app, argc, argv);

  // global seed override via environment
  std::uint64_t env_seed = 0;
  bool env_seed_set = false;
  if (const char* env = std::getenv("NORMPROP_SEED")) {
    env_seed = std::strtoull(env, nullptr, 10);
    env_seed_set = true;
  }

  try {
    if (*stats) {
      if (env_seed_set) stats_args.seed = env_seed;
      return cli::run_stats(stats_args, std::cout);
    }
    if (*bound) {
      if (env_seed_set) bound_args.seed = env_seed;
      return cli::run_bound(bound_args, std::cout);
    }
    if (*jac) {
      if (env_seed_set) jac_args.seed = env_seed;
      return cli::run_jacobian(jac_args, std::cout);
    }
    if (*train) {
      if (!train_norm.empty()) train_args.norm = train_norm;
      if (!train_data_norm.empty()) train_args.data_norm = train_data_norm;
      if (train_batch >= 0) train_args.batch_size = train_batch;
      if (train_epochs >= 0) train_args.epochs = train_epochs;
      if (train_seed_set) train_args.seed = train_seed;
      if (env_seed_set) train_args.seed = env_seed;
      if (!train_out.empty()) train_args.out = train_out;
      return cli::run_train(train_args, std::cout);
    }
    if (*shift) {
      if (shift_epochs >= 0) shift_args.epochs = shift_epochs;
      if (shift_seed_set) shift_args.seed = shift_seed;
      if (env_seed_set) shift_args.seed = env_seed;
      if (!shift_out.empty()) shift_args.out = shift_out;
      return cli::run_shift(shift_args, std::cout);
    }
    if (*cmp) {
      if (cmp_epochs >= 0) cmp_args.epochs = cmp_epochs;
      if (cmp_seed_set) cmp_args.seed = cmp_seed;
      if (env_seed_set) cmp_args.seed = env_seed;
      if (!cmp_out.empty()) cmp_args.out = cmp_out;
      return cli::run_compare(cmp_args, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error category=" << e.category() << " message=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error category=internal message=\"" << e.what() << "\"\n";
    return 2;
  }
  return 0;
}
