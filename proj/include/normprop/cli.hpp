// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_CLI_HPP
#define NORMPROP_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace normprop::cli {

// Subcommand entry points. Each returns 0 on success; failures surface as
// normprop::Error exceptions which the binary maps to a single
// machine-parsable stderr line and a nonzero exit.

struct StatsArgs {
  std::string act = "relu";  // relu | prelu(a) via --a | tanh | identity
  double a = 0.25;
  std::size_t mc = 10000000;
  std::uint64_t seed = 1;
  std::string out;  // optional CSV path
};
int run_stats(const StatsArgs& args, std::ostream& console);

struct BoundArgs {
  std::string weights_file;  // CSV matrix; empty -> random
  int m = 8, n = 32;
  std::uint64_t seed = 1;
  std::size_t samples = 100000;
  double sigma = 1.0;
  std::string out;
};
int run_bound(const BoundArgs& args, std::ostream& console);

struct JacobianArgs {
  int m = 16, n = 16;
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  std::string out;
};
int run_jacobian(const JacobianArgs& args, std::ostream& console);

struct TrainArgs {
  std::string config_file;
  std::optional<std::string> norm;       // normprop|batchnorm|none
  std::optional<std::string> data_norm;  // global|batch
  std::optional<int> batch_size;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};
int run_train(const TrainArgs& args, std::ostream& console);

struct ShiftArgs {
  std::string config_file;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};
int run_shift(const ShiftArgs& args, std::ostream& console);

struct CompareArgs {
  std::string config_file;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};
int run_compare(const CompareArgs& args, std::ostream& console);

}  // namespace normprop::cli

#endif
