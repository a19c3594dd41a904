// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdint>
#include <string>

#include "doctest.h"
#include "normprop/data.hpp"
#include "testutil.hpp"

using namespace normprop;
using testutil::random_normal;
using testutil::TempDir;

namespace {

std::string be32(std::uint32_t v) {
  std::string s(4, '\0');
  s[0] = char((v >> 24) & 0xff);
  s[1] = char((v >> 16) & 0xff);
  s[2] = char((v >> 8) & 0xff);
  s[3] = char(v & 0xff);
  return s;
}

std::string idx_images(std::size_t count, std::size_t rows, std::size_t cols) {
  std::string s = be32(0x803) + be32(std::uint32_t(count)) + be32(std::uint32_t(rows)) +
                  be32(std::uint32_t(cols));
  for (std::size_t i = 0; i < count * rows * cols; ++i) s += char(i % 251);
  return s;
}

std::string idx_labels(std::size_t count) {
  std::string s = be32(0x801) + be32(std::uint32_t(count));
  for (std::size_t i = 0; i < count; ++i) s += char(i % 10);
  return s;
}

// plain logistic regression by gradient descent; reaches 100% on a linearly
// separable set and certifies the synthetic task
double logistic_train_accuracy(const Dataset& ds, int iters) {
  const std::size_t n = ds.size(), d = ds.feature_dim();
  std::vector<double> w(d, 0.0);
  double b = 0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * double(ds.features(i, j));
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - (ds.labels[i] == 1 ? 1.0 : 0.0);
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * double(ds.features(i, j));
      gb += err;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.5 / double(n) * gw[j];
    b -= 0.5 / double(n) * gb;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * double(ds.features(i, j));
    if ((z > 0 ? 1 : 0) == ds.labels[i]) ++correct;
  }
  return double(correct) / double(n);
}

}  // namespace

TEST_CASE("global stats: two-sample hand case and degenerate feature") {
  Dataset ds;
  ds.features = Tensor({2, 2}, {0, 5, 2, 5});
  ds.labels = {0, 1};
  const DatasetStats st = fit_global_stats(ds);
  CHECK(st.mean[0] == 1);
  CHECK(st.stddev[0] == 1);  // population divisor: sqrt(((0-1)^2+(2-1)^2)/2)
  CHECK(st.count == 2);
  // constant feature: floored and flagged
  CHECK(st.stddev[1] == kStdFloor);
  CHECK(st.floored[1] == 1);
  CHECK(st.floored[0] == 0);
}

TEST_CASE("global stats match a two-pass oracle on random data") {
  Rng rng(211);
  Dataset ds;
  ds.features = random_normal({1000, 16}, rng, 2.5);
  const DatasetStats st = fit_global_stats(ds);
  for (std::size_t j = 0; j < 16; ++j) {
    double sum = 0;
    for (std::size_t i = 0; i < 1000; ++i) sum += ds.features(i, j);
    const double mean = sum / 1000;
    double ss = 0;
    for (std::size_t i = 0; i < 1000; ++i) ss += (ds.features(i, j) - mean) * (ds.features(i, j) - mean);
    CHECK(double(st.mean[j]) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(double(st.stddev[j]) == doctest::Approx(std::sqrt(ss / 1000)).epsilon(1e-12));
  }
}

TEST_CASE("global stats preconditions") {
  Dataset empty;
  CHECK_THROWS_AS(fit_global_stats(empty), DataError);
  Dataset one;
  one.features = Tensor({1, 3});
  CHECK_THROWS_AS(fit_global_stats(one), DataError);
}

TEST_CASE("apply_normalization: centering, standardization, idempotence") {
  Rng rng(223);
  Dataset ds;
  ds.features = random_normal({500, 8}, rng, 3.0);
  const DatasetStats st = fit_global_stats(ds);

  // x == mean -> zeros
  Tensor at_mean({1, 8});
  for (std::size_t j = 0; j < 8; ++j) at_mean(0, j) = st.mean[j];
  const Tensor zeros = apply_normalization(at_mean, st);
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::fabs(double(zeros(0, j))) < 1e-12);

  // fit-then-apply standardizes the fitting set
  const Tensor normed = apply_normalization(ds.features, st);
  Dataset normed_ds;
  normed_ds.features = normed;
  const DatasetStats st2 = fit_global_stats(normed_ds);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(std::fabs(double(st2.mean[j])) < 1e-10);
    CHECK(std::fabs(double(st2.stddev[j]) - 1.0) < 1e-10);
  }

  Tensor wrong({2, 5});
  CHECK_THROWS_AS(apply_normalization(wrong, st), DataError);
}

TEST_CASE("batch data normalization leaves a standardized batch unchanged") {
  Rng rng(227);
  Tensor batch = random_normal({256, 4}, rng);
  // pre-standardize per feature
  for (std::size_t j = 0; j < 4; ++j) {
    double sum = 0, ss = 0;
    for (std::size_t i = 0; i < 256; ++i) sum += batch(i, j);
    const double mean = sum / 256;
    for (std::size_t i = 0; i < 256; ++i) ss += (batch(i, j) - mean) * (batch(i, j) - mean);
    const double sd = std::sqrt(ss / 256);
    for (std::size_t i = 0; i < 256; ++i) batch(i, j) = real((batch(i, j) - mean) / sd);
  }
  RunningStats running(4);
  const Tensor out = batch_normalize_data(batch, running);
  CHECK(max_abs_diff(out, batch) < 1e-10);
  CHECK(running.steps == 1);
}

TEST_CASE("running stats converge on an i.i.d. stream") {
  Rng rng(229);
  RunningStats running(3, real(0.99));
  for (int b = 0; b < 800; ++b) {
    Tensor batch({64, 3});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i] = real(5.0 + 2.0 * rng.normal());  // N(5, 4)
    }
    batch_normalize_data(batch, running);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::fabs(double(running.mean[j]) - 5.0) < 0.1);
    CHECK(std::fabs(std::sqrt(double(running.var[j])) - 2.0) < 0.1);
  }
}

TEST_CASE("the same sample gets different representations in different batches") {
  Rng rng(233);
  Tensor sample = random_normal({1, 4}, rng);
  Tensor batch_a = random_normal({8, 4}, rng);
  Tensor batch_b = random_normal({8, 4}, rng, 2.0);
  for (std::size_t j = 0; j < 4; ++j) {
    batch_a(0, j) = sample(0, j);
    batch_b(0, j) = sample(0, j);
  }
  RunningStats ra(4), rb(4);
  const Tensor na = batch_normalize_data(batch_a, ra);
  const Tensor nb = batch_normalize_data(batch_b, rb);
  double diff = 0;
  for (std::size_t j = 0; j < 4; ++j) diff = std::max(diff, std::fabs(double(na(0, j) - nb(0, j))));
  CHECK(diff > 1e-3);
}

TEST_CASE("batch of one is rejected with a pointer to global normalization") {
  RunningStats running(4);
  Tensor single({1, 4});
  try {
    batch_normalize_data(single, running);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("global") != std::string::npos);
  }
}

TEST_CASE("running stats are insensitive to stream order") {
  Rng rng(239);
  // one fixed pool of batches, consumed in two different orders
  std::vector<Tensor> batches;
  for (int b = 0; b < 600; ++b) {
    Tensor batch({32, 2});
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = real(1.5 + 0.8 * rng.normal());
    batches.push_back(std::move(batch));
  }
  std::vector<std::size_t> order_a(batches.size()), order_b(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) order_a[i] = order_b[i] = i;
  Rng shuffle_a(1), shuffle_b(2);
  shuffle_a.shuffle(order_a);
  shuffle_b.shuffle(order_b);

  RunningStats ra(2, real(0.99)), rb(2, real(0.99));
  for (std::size_t i = 0; i < batches.size(); ++i) {
    Tensor ta = batches[order_a[i]];
    Tensor tb = batches[order_b[i]];
    batch_normalize_data(ta, ra);
    batch_normalize_data(tb, rb);
  }
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(std::fabs(double(ra.mean[j] - rb.mean[j])) < 0.05);
    CHECK(std::fabs(double(ra.var[j] - rb.var[j])) < 0.05);
  }
}

TEST_CASE("frozen running normalization is bit-stable") {
  Rng rng(241);
  RunningStats running(4);
  Tensor warm = random_normal({64, 4}, rng);
  batch_normalize_data(warm, running);
  const Tensor x = random_normal({5, 4}, rng);
  const Tensor once = apply_running_normalization(x, running);
  const Tensor twice = apply_running_normalization(x, running);
  CHECK(max_abs_diff(once, twice) == 0);
}

TEST_CASE("idx loader: images, labels, validation errors") {
  TempDir tmp("idx");
  testutil::write_file(tmp.file("img.idx"), idx_images(3, 28, 28));
  testutil::write_file(tmp.file("lab.idx"), idx_labels(3));

  const Dataset ds = load_idx(tmp.file("img.idx"), tmp.file("lab.idx"));
  CHECK(ds.size() == 3);
  CHECK(ds.feature_dim() == 784);
  CHECK(ds.sample_shape == std::vector<std::size_t>{1, 28, 28});
  CHECK(ds.labels.size() == 3);

  // bad magic reports the byte offset
  testutil::write_file(tmp.file("bad.idx"), be32(0x9999) + be32(1));
  try {
    load_idx(tmp.file("bad.idx"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }

  // truncated pixel payload reports an offset
  std::string short_file = idx_images(2, 4, 4);
  short_file.resize(short_file.size() - 5);
  testutil::write_file(tmp.file("short.idx"), short_file);
  try {
    load_idx(tmp.file("short.idx"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  // label/image count mismatch
  testutil::write_file(tmp.file("lab5.idx"), idx_labels(5));
  CHECK_THROWS_AS(load_idx(tmp.file("img.idx"), tmp.file("lab5.idx")), DataError);
}

TEST_CASE("csv loader: header, label column, malformed rows") {
  TempDir tmp("csv");
  testutil::write_file(tmp.file("d.csv"),
                       "f0,label,f1\n1.5,0,2.5\n2.5,1,3.5\n0.5,1,1.0\n4.0,0,0.25\n");
  const Dataset ds = load_csv(tmp.file("d.csv"), "label");
  CHECK(ds.size() == 4);
  CHECK(ds.feature_dim() == 2);
  CHECK(ds.labels == std::vector<int>{0, 1, 1, 0});
  CHECK(ds.num_classes == 2);
  CHECK(double(ds.features(0, 0)) == 1.5);
  CHECK(double(ds.features(0, 1)) == 2.5);

  CHECK_THROWS_AS(load_csv(tmp.file("d.csv"), "missing"), FormatError);
  testutil::write_file(tmp.file("ragged.csv"), "a,label\n1,0\n2\n");
  CHECK_THROWS_AS(load_csv(tmp.file("ragged.csv"), "label"), FormatError);
  testutil::write_file(tmp.file("alpha.csv"), "a,label\nx,0\n");
  CHECK_THROWS_AS(load_csv(tmp.file("alpha.csv"), "label"), FormatError);
}

TEST_CASE("cifar10 loader parses 3073-byte records") {
  TempDir tmp("cifar");
  std::string blob;
  for (int rec = 0; rec < 2; ++rec) {
    blob += char(rec + 3);
    for (int i = 0; i < 3072; ++i) blob += char((i + rec) % 256);
  }
  testutil::write_file(tmp.file("batch.bin"), blob);
  const Dataset ds = load_cifar10(tmp.file("batch.bin"));
  CHECK(ds.size() == 2);
  CHECK(ds.feature_dim() == 3072);
  CHECK(ds.labels == std::vector<int>{3, 4});
  CHECK(ds.sample_shape == std::vector<std::size_t>{3, 32, 32});

  testutil::write_file(tmp.file("trunc.bin"), blob.substr(0, 3073 + 100));
  CHECK_THROWS_AS(load_cifar10(tmp.file("trunc.bin")), FormatError);
}

TEST_CASE("synthetic generator is seed-deterministic") {
  const Dataset a = synth_gaussian(1000, 10, 7, SynthTask::two_class_linear);
  const Dataset b = synth_gaussian(1000, 10, 7, SynthTask::two_class_linear);
  CHECK(max_abs_diff(a.features, b.features) == 0);
  CHECK(a.labels == b.labels);
  const Dataset c = synth_gaussian(1000, 10, 8, SynthTask::two_class_linear);
  CHECK(max_abs_diff(a.features, c.features) > 0);
}

TEST_CASE("two-class task is linearly separable with unit margin") {
  const Dataset ds = synth_gaussian(2000, 16, 11, SynthTask::two_class_linear);
  const double invsq = 1.0 / std::sqrt(16.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double along = 0;
    for (std::size_t j = 0; j < 16; ++j) along += double(ds.features(i, j)) * invsq;
    if (ds.labels[i] == 1) {
      CHECK(along >= 1.0 - 1e-9);
    } else {
      CHECK(along <= -1.0 + 1e-9);
    }
  }
  // a linear model certifies it end to end
  CHECK(logistic_train_accuracy(ds, 300) == 1.0);
}

TEST_CASE("mixture task places one bump per class") {
  const Dataset ds = synth_gaussian(900, 8, 13, SynthTask::k_class_mixture, 3);
  CHECK(ds.num_classes == 3);
  // class-conditional mean of the labeled coordinate is near 3
  std::vector<double> sums(3, 0.0);
  std::vector<int> counts(3, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    sums[ds.labels[i]] += ds.features(i, static_cast<std::size_t>(ds.labels[i]));
    counts[ds.labels[i]] += 1;
  }
  for (int c = 0; c < 3; ++c) CHECK(std::fabs(sums[c] / counts[c] - 3.0) < 0.3);
}
