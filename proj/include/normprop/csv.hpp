// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_CSV_HPP
#define NORMPROP_CSV_HPP

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "normprop/errors.hpp"

namespace normprop {

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_num(int v) { return std::to_string(v); }

// Every emitted CSV starts with a comment line carrying the config hash and
// seed, then a header row.
class CsvWriter {
public:
  CsvWriter(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
            const std::vector<std::string>& header)
      : os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot write " + path);
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(config_hash));
    os_ << "# config_hash=" << hash_buf << " seed=" << seed << "\n";
    write_cells(header);
  }

  void row(const std::vector<std::string>& cells) { write_cells(cells); }

private:
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ',';
      os_ << cells[i];
    }
    os_ << "\n";
  }

  std::ofstream os_;
};

}  // namespace normprop

#endif
