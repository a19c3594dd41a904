// SPDX-License-Identifier: Apache-2.0
#include "normprop/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "normprop/errors.hpp"

namespace normprop {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(real)));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}
std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("checkpoint truncated");
  return s;
}
Tensor read_tensor(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(real)));
  if (!is) throw FormatError("checkpoint truncated");
  return t;
}

void write_running(std::ostream& os, const RunningStats& r) {
  write_tensor(os, r.mean);
  write_tensor(os, r.var);
  double decay = static_cast<double>(r.decay);
  os.write(reinterpret_cast<const char*>(&decay), sizeof(decay));
  write_u64(os, r.steps);
}

RunningStats read_running(std::istream& is) {
  RunningStats r;
  r.mean = read_tensor(is);
  r.var = read_tensor(is);
  double decay = 0;
  is.read(reinterpret_cast<char*>(&decay), sizeof(decay));
  if (!is) throw FormatError("checkpoint truncated");
  r.decay = static_cast<real>(decay);
  r.steps = static_cast<std::size_t>(read_u64(is));
  return r;
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net, const OptimizerState& opt,
                     const EvalNormalizer& normalizer, int epoch, const std::string& rng_state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint to " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, static_cast<std::uint64_t>(epoch));
  write_string(os, rng_state);

  write_u32(os, static_cast<std::uint32_t>(normalizer.kind));
  if (normalizer.kind == EvalNormalizer::Kind::global) {
    write_tensor(os, normalizer.global->mean);
    write_tensor(os, normalizer.global->stddev);
    write_u64(os, normalizer.global->count);
  } else if (normalizer.kind == EvalNormalizer::Kind::running) {
    write_running(os, *normalizer.running);
  }

  const std::vector<ParamRef> params = net.params();
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const ParamRef& p : params) {
    write_string(os, p.name);
    write_tensor(os, *p.value);
  }

  write_u32(os, static_cast<std::uint32_t>(opt.velocity.size()));
  for (const Tensor& v : opt.velocity) write_tensor(os, v);
  double lr = static_cast<double>(opt.lr), mom = static_cast<double>(opt.momentum),
         wd = static_cast<double>(opt.weight_decay);
  os.write(reinterpret_cast<const char*>(&lr), sizeof(lr));
  os.write(reinterpret_cast<const char*>(&mom), sizeof(mom));
  os.write(reinterpret_cast<const char*>(&wd), sizeof(wd));

  // batch-norm running estimates, keyed by layer index
  std::vector<std::pair<std::uint32_t, const RunningStats*>> bn;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (auto* layer = dynamic_cast<BatchNormDense*>(&net.layer(i))) {
      bn.emplace_back(static_cast<std::uint32_t>(i), &layer->running());
    }
  }
  write_u32(os, static_cast<std::uint32_t>(bn.size()));
  for (const auto& [idx, running] : bn) {
    write_u32(os, idx);
    write_running(os, *running);
  }
  if (!os) throw IoError("failed while writing checkpoint " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, Network& net, OptimizerState& opt,
                               EvalNormalizer& normalizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": not a checkpoint file (bad magic at byte offset 0)");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.epoch = static_cast<int>(read_u64(is));
  meta.rng_state = read_string(is);

  const auto kind = static_cast<EvalNormalizer::Kind>(read_u32(is));
  normalizer = EvalNormalizer{};
  normalizer.kind = kind;
  if (kind == EvalNormalizer::Kind::global) {
    DatasetStats st;
    st.mean = read_tensor(is);
    st.stddev = read_tensor(is);
    st.count = static_cast<std::size_t>(read_u64(is));
    st.floored.assign(st.mean.size(), 0);
    normalizer.global = std::move(st);
  } else if (kind == EvalNormalizer::Kind::running) {
    normalizer.running = read_running(is);
  }

  std::vector<ParamRef> params = net.params();
  const std::uint32_t n_params = read_u32(is);
  if (n_params != params.size()) {
    throw FormatError(path + ": checkpoint holds " + std::to_string(n_params) +
                      " parameters, network has " + std::to_string(params.size()));
  }
  for (ParamRef& p : params) {
    const std::string name = read_string(is);
    Tensor t = read_tensor(is);
    if (name != p.name || !t.same_shape(*p.value)) {
      throw FormatError(path + ": parameter mismatch at " + p.name + " (file has " + name + " " +
                        t.shape_str() + ")");
    }
    *p.value = std::move(t);
  }

  const std::uint32_t n_vel = read_u32(is);
  opt.velocity.clear();
  for (std::uint32_t i = 0; i < n_vel; ++i) opt.velocity.push_back(read_tensor(is));
  double lr = 0, mom = 0, wd = 0;
  is.read(reinterpret_cast<char*>(&lr), sizeof(lr));
  is.read(reinterpret_cast<char*>(&mom), sizeof(mom));
  is.read(reinterpret_cast<char*>(&wd), sizeof(wd));
  if (!is) throw FormatError(path + ": checkpoint truncated");
  opt.lr = static_cast<real>(lr);
  opt.momentum = static_cast<real>(mom);
  opt.weight_decay = static_cast<real>(wd);

  const std::uint32_t n_bn = read_u32(is);
  for (std::uint32_t i = 0; i < n_bn; ++i) {
    const std::uint32_t idx = read_u32(is);
    RunningStats running = read_running(is);
    auto* layer = idx < net.layer_count() ? dynamic_cast<BatchNormDense*>(&net.layer(idx)) : nullptr;
    if (!layer) {
      throw FormatError(path + ": checkpoint has batch-norm state for layer " +
                        std::to_string(idx) + " but the network does not");
    }
    layer->running() = std::move(running);
  }
  return meta;
}

}  // namespace normprop
