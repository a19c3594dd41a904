// SPDX-License-Identifier: Apache-2.0
#include "normprop/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "normprop/errors.hpp"
#include "normprop/rng.hpp"

namespace normprop {

void RunningStats::update(const Tensor& batch_mean, const Tensor& batch_var) {
  if (!batch_mean.same_shape(mean) || !batch_var.same_shape(var)) {
    throw DimensionError("running stats update shape mismatch");
  }
  if (steps == 0) {
    mean = batch_mean;
    var = batch_var;
  } else {
    const real w = 1 - decay;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = decay * mean[i] + w * batch_mean[i];
      var[i] = decay * var[i] + w * batch_var[i];
    }
  }
  ++steps;
}

Tensor RunningStats::stddev_floored() const {
  Tensor s({var.size()});
  for (std::size_t i = 0; i < var.size(); ++i) {
    s[i] = std::max(std::sqrt(var[i]), kStdFloor);
  }
  return s;
}

DatasetStats fit_global_stats(const Dataset& dataset) { return fit_global_stats(dataset.features); }

DatasetStats fit_global_stats(const Tensor& features) {
  if (features.empty()) throw DataError("cannot fit statistics on an empty dataset");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw DataError("global statistics need at least 2 samples, got " + std::to_string(n));
  DatasetStats st;
  st.mean = Tensor({d});
  st.stddev = Tensor({d});
  st.count = n;
  st.floored.assign(d, 0);
  const real* px = features.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(d); ++j) {
    real sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += px[i * d + j];
    const real mean = sum / static_cast<real>(n);
    real ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const real dev = px[i * d + j] - mean;
      ss += dev * dev;
    }
    real sd = std::sqrt(ss / static_cast<real>(n));  // population divisor
    st.mean[j] = mean;
    if (sd < kStdFloor) {
      sd = kStdFloor;
      st.floored[j] = 1;
    }
    st.stddev[j] = sd;
  }
  return st;
}

Tensor apply_normalization(const Tensor& x, const DatasetStats& stats) {
  if (x.rank() != 2 || x.dim(1) != stats.mean.size()) {
    throw DataError("normalization dimension mismatch: " + x.shape_str() + " vs " +
                    std::to_string(stats.mean.size()) + " features");
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out({n, d});
  const real* px = x.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      po[i * d + j] = (px[i * d + j] - stats.mean[j]) / stats.stddev[j];
    }
  }
  return out;
}

Tensor batch_normalize_data(const Tensor& batch, RunningStats& running) {
  if (batch.rank() != 2) throw DataError("batch must be [N,D], got " + batch.shape_str());
  const std::size_t n = batch.dim(0), d = batch.dim(1);
  if (n < 2) {
    throw DataError(
        "batch data normalization needs batch >= 2; use global data normalization for "
        "batch size 1");
  }
  if (running.mean.size() != d) throw DimensionError("running stats dimension mismatch");
  Tensor bmean({d}), bvar({d});
  const real* px = batch.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(d); ++j) {
    real sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += px[i * d + j];
    const real mean = sum / static_cast<real>(n);
    real ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const real dev = px[i * d + j] - mean;
      ss += dev * dev;
    }
    bmean[j] = mean;
    bvar[j] = ss / static_cast<real>(n);
  }
  Tensor out({n, d});
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(d); ++j) {
    const real sd = std::max(std::sqrt(bvar[j]), kStdFloor);
    for (std::size_t i = 0; i < n; ++i) {
      po[i * d + j] = (px[i * d + j] - bmean[j]) / sd;
    }
  }
  running.update(bmean, bvar);
  return out;
}

Tensor apply_running_normalization(const Tensor& x, const RunningStats& running) {
  if (x.rank() != 2 || x.dim(1) != running.mean.size()) {
    throw DataError("running normalization dimension mismatch: " + x.shape_str());
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  const Tensor sd = running.stddev_floored();
  Tensor out({n, d});
  const real* px = x.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      po[i * d + j] = (px[i * d + j] - running.mean[j]) / sd[j];
    }
  }
  return out;
}

Dataset synth_gaussian(std::size_t n, std::size_t dim, std::uint64_t seed, SynthTask task,
                       int k) {
  if (n < 1) throw DataError("synthetic dataset needs n >= 1");
  if (dim < 1) throw DataError("synthetic dataset needs dim >= 1");
  if (task == SynthTask::k_class_mixture && k < 2) throw DataError("mixture needs k >= 2");
  Rng rng(seed);
  Dataset ds;
  ds.features = Tensor({n, dim});
  ds.labels.resize(n);
  ds.sample_shape = {dim};
  real* px = ds.features.data();
  if (task == SynthTask::two_class_linear) {
    ds.num_classes = 2;
    const real invsq = real(1) / std::sqrt(static_cast<real>(dim));
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      const real sign = label == 1 ? real(1) : real(-1);
      ds.labels[i] = label;
      real* row = px + i * dim;
      real udotg = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        row[j] = static_cast<real>(rng.normal());
        udotg += row[j] * invsq;
      }
      const real along = sign * (1 + std::fabs(static_cast<real>(rng.normal())));
      // remove the component along u, then place the margin-bearing one
      for (std::size_t j = 0; j < dim; ++j) {
        row[j] += (along - udotg) * invsq;
      }
    }
  } else {
    ds.num_classes = k;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % static_cast<std::size_t>(k));
      ds.labels[i] = label;
      real* row = px + i * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<real>(rng.normal());
      row[static_cast<std::size_t>(label) % dim] += 3;
    }
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) {
    throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

struct IdxImages {
  std::size_t count, rows, cols;
  std::vector<unsigned char> pixels;
};

IdxImages read_idx_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  const std::uint32_t magic = read_be32(f, path, 0);
  if (magic != 0x00000803u) {
    std::ostringstream os;
    os << path << ": bad image magic 0x" << std::hex << magic << " at byte offset 0 (want 0x803)";
    throw FormatError(os.str());
  }
  IdxImages img;
  img.count = read_be32(f, path, 4);
  img.rows = read_be32(f, path, 8);
  img.cols = read_be32(f, path, 12);
  const std::size_t total = img.count * img.rows * img.cols;
  img.pixels.resize(total);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(f.gcount()) != total) {
    throw FormatError(path + ": truncated at byte offset " +
                      std::to_string(16 + static_cast<std::size_t>(f.gcount())));
  }
  return img;
}

std::vector<unsigned char> read_idx_labels(const std::string& path, std::size_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  const std::uint32_t magic = read_be32(f, path, 0);
  if (magic != 0x00000801u) {
    std::ostringstream os;
    os << path << ": bad label magic 0x" << std::hex << magic << " at byte offset 0 (want 0x801)";
    throw FormatError(os.str());
  }
  const std::size_t count = read_be32(f, path, 4);
  if (expected != 0 && count != expected) {
    throw DataError(path + ": label count " + std::to_string(count) + " != image count " +
                    std::to_string(expected));
  }
  std::vector<unsigned char> labels(count);
  f.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(f.gcount()) != count) {
    throw FormatError(path + ": truncated at byte offset " +
                      std::to_string(8 + static_cast<std::size_t>(f.gcount())));
  }
  return labels;
}

}  // namespace

Dataset load_idx(const std::string& images_path) { return load_idx(images_path, ""); }

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const IdxImages img = read_idx_images(images_path);
  Dataset ds;
  const std::size_t d = img.rows * img.cols;
  ds.features = Tensor({img.count, d});
  ds.sample_shape = {1, img.rows, img.cols};
  real* px = ds.features.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) px[i] = static_cast<real>(img.pixels[i]);
  if (!labels_path.empty()) {
    const std::vector<unsigned char> labels = read_idx_labels(labels_path, img.count);
    ds.labels.assign(labels.begin(), labels.end());
    int maxl = 0;
    for (int l : ds.labels) maxl = std::max(maxl, l);
    ds.num_classes = maxl + 1;
  }
  return ds;
}

Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream f(path);
  if (!f) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path + ": empty file, expected a header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::ptrdiff_t label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label_idx = static_cast<std::ptrdiff_t>(i);
  }
  if (label_idx < 0) throw FormatError(path + ": no column named '" + label_column + "'");
  std::vector<real> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      double v;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ": line " + std::to_string(lineno) + ": cannot parse '" + cell +
                          "'");
      }
      if (static_cast<std::ptrdiff_t>(col) == label_idx) {
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(static_cast<real>(v));
      }
      ++col;
    }
    if (col != header.size()) {
      throw FormatError(path + ": line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " cells, got " + std::to_string(col));
    }
    ++rows;
  }
  if (rows == 0) throw DataError(path + ": no data rows");
  Dataset ds;
  const std::size_t d = header.size() - 1;
  ds.features = Tensor({rows, d}, std::move(values));
  ds.labels = std::move(labels);
  ds.sample_shape = {d};
  int maxl = 0;
  for (int l : ds.labels) maxl = std::max(maxl, l);
  ds.num_classes = maxl + 1;
  return ds;
}

Dataset load_cifar10(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  f.seekg(0, std::ios::end);
  const std::size_t bytes = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  constexpr std::size_t kRecord = 3073;
  if (bytes == 0 || bytes % kRecord != 0) {
    throw FormatError(path + ": size " + std::to_string(bytes) +
                      " is not a multiple of the 3073-byte record");
  }
  const std::size_t n = bytes / kRecord;
  Dataset ds;
  ds.features = Tensor({n, 3072});
  ds.labels.resize(n);
  ds.num_classes = 10;
  ds.sample_shape = {3, 32, 32};
  std::vector<unsigned char> rec(kRecord);
  for (std::size_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!f) throw FormatError(path + ": truncated at byte offset " + std::to_string(i * kRecord));
    ds.labels[i] = rec[0];
    real* row = ds.features.data() + i * 3072;
    for (std::size_t j = 0; j < 3072; ++j) row[j] = static_cast<real>(rec[j + 1]);
  }
  return ds;
}

}  // namespace normprop
