// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_ERRORS_HPP
#define NORMPROP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace normprop {

// Base error carrying a stable machine-parsable category token. The CLI
// prints "error category=<token> ..." and exits nonzero.
class Error : public std::runtime_error {
public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data", w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format", w) {}
};

struct NormalizationError : Error {
  explicit NormalizationError(const std::string& w) : Error("normalization", w) {}
};

struct StateError : Error {
  explicit StateError(const std::string& w) : Error("state", w) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

struct EvalError : Error {
  explicit EvalError(const std::string& w) : Error("evaluation", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};

}  // namespace normprop

#endif
