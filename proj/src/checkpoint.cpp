#include "dap/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dap/error.hpp"
#include "dap/map_io.hpp"

namespace dap::train {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(v, 4); }
  void u64(std::uint64_t v) { raw(v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void values(const Tensor& t) {
    for (real v : t.data()) u64(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void raw(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void values(Tensor& t) {
    need(8 * t.size());
    for (auto& v : t.data()) v = static_cast<real>(std::bit_cast<double>(u64()));
  }
  void magic(const char* m) {
    need(4);
    if (std::memcmp(b_.data(), m, 4) != 0) throw BadMagicError("not a checkpoint file");
    pos_ += 4;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw TruncatedError("checkpoint truncated");
  }
  std::uint64_t raw(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

model::ModelConfig model_config(const TrainConfig& c, std::size_t sources,
                                std::size_t label_channels) {
  model::ModelConfig m;
  m.apb.height = c.height;
  m.apb.width = c.width;
  m.apb.base_channels = c.base_channels;
  m.sources = sources;
  m.label_channels = label_channels;
  m.umb_width = c.umb_width;
  m.pixel_budget = c.pixel_budget;
  return m;
}

Checkpoint make_checkpoint(const TrainConfig& config, const model::Model& model,
                           const AdamState& adam, std::size_t step, std::size_t epoch) {
  Checkpoint c;
  c.config = config;
  c.sources = model.config().sources;
  c.label_channels = model.config().label_channels;
  c.step = step;
  c.epoch = epoch;
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    c.names.push_back(store.name(i));
    c.params.push_back(store.value(i));
  }
  c.adam = adam;
  return c;
}

model::Model restore_model(const Checkpoint& ckpt) {
  model::Model m(model_config(ckpt.config, ckpt.sources, ckpt.label_channels), ckpt.config.seed);
  auto& store = m.params();
  if (store.size() != ckpt.params.size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                    " tensors, model expects " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto idx = store.find(ckpt.names[i]);
    if (!idx) throw DataError("checkpoint tensor '" + ckpt.names[i] + "' has no model parameter");
    if (store.value(*idx).shape() != ckpt.params[i].shape()) {
      throw DataError("checkpoint tensor '" + ckpt.names[i] + "' has shape " +
                      to_string(ckpt.params[i].shape()) + ", model expects " +
                      to_string(store.value(*idx).shape()));
    }
    store.value(*idx) = ckpt.params[i];
  }
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.u32(0x43504144);  // "DAPC"
  w.u32(kCheckpointVersion);
  w.u64(c.sources);
  w.u64(c.label_channels);
  w.str(c.config.to_text());
  w.u64(c.step);
  w.u64(c.epoch);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    w.str(c.names[i]);
    w.u32(static_cast<std::uint32_t>(c.params[i].rank()));
    for (auto d : c.params[i].shape()) w.u64(d);
    w.values(c.params[i]);
  }
  w.u64(c.adam.step);
  for (const auto& m : c.adam.m) w.values(m);
  for (const auto& v : c.adam.v) w.values(v);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("DAPC");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.sources = r.u64();
  c.label_channels = r.u64();
  c.config = TrainConfig::parse(r.str());
  c.step = r.u64();
  c.epoch = r.u64();
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    c.names.push_back(r.str());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    Tensor t(shape);
    r.values(t);
    c.params.push_back(std::move(t));
  }
  c.adam = AdamState::zeros_like(c.params);
  c.adam.step = r.u64();
  for (auto& m : c.adam.m) r.values(m);
  for (auto& v : c.adam.v) r.values(v);
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace dap::train
