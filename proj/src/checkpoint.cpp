#include "emi/checkpoint.hpp"

#include <limits>
#include <unordered_map>

#include "binio.hpp"

namespace emi::checkpoint {

std::vector<std::uint8_t> encode(std::span<const NamedTensor> records) {
  binio::Writer w;
  w.bytes(kEmicMagic.data(), kEmicMagic.size());
  w.u16(kEmicVersion);
  for (const auto& rec : records) {
    if (rec.name.empty() || rec.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ConfigError("checkpoint record name length out of range");
    }
    if (rec.value.rank() == 0 || rec.value.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw DimensionError("checkpoint record '" + rec.name + "' has unsupported rank");
    }
    w.u16(static_cast<std::uint16_t>(rec.name.size()));
    w.bytes(rec.name.data(), rec.name.size());
    w.u8(static_cast<std::uint8_t>(rec.value.rank()));
    for (auto e : rec.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : rec.value.data()) w.f64(v);
  }
  return std::move(w.buffer());
}

std::vector<NamedTensor> decode(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kEmicMagic) throw FormatError("bad magic, expected EMIC", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kEmicVersion) throw FormatError("unsupported EMIC version " + std::to_string(version), version_at);

  std::vector<NamedTensor> out;
  while (!r.done()) {
    const std::uint64_t record_at = r.offset();
    const std::uint16_t name_len = r.u16("record name length");
    if (name_len == 0) throw FormatError("empty record name", record_at);
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "record name");
    const std::uint64_t rank_at = r.offset();
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) throw FormatError("record '" + name + "' has rank 0", rank_at);
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      const std::uint64_t at = r.offset();
      e = r.u32("extent");
      if (e == 0) throw FormatError("record '" + name + "' has a zero extent", at);
      count *= e;
    }
    r.require(count * 8, "tensor payload");
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64("tensor value");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void write(const std::filesystem::path& path, std::span<const NamedTensor> records) {
  binio::write_file(path, encode(records));
}

std::vector<NamedTensor> read(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::vector<NamedTensor> collect(const EmotionModel& model, const optim::Ema* ema) {
  std::vector<NamedTensor> out;
  const auto params = model.parameters();
  for (const Param* p : params) out.push_back({p->name, p->value});
  if (ema) {
    const auto& shadows = ema->shadows();
    if (shadows.size() != params.size()) throw DimensionError("EMA shadows do not mirror the model parameters");
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({kEmaPrefix + params[i]->name, shadows[i]});
  }
  return out;
}

void restore(EmotionModel& model, std::span<const NamedTensor> records, Weights which) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& rec : records) by_name[rec.name] = &rec.value;
  const std::string prefix = which == Weights::ema ? kEmaPrefix : "";
  for (Param* p : model.parameters()) {
    auto it = by_name.find(prefix + p->name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + prefix + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw ConfigError("checkpoint tensor '" + it->first + "' has shape " + shape_to_string(it->second->shape()) +
                        ", model expects " + shape_to_string(p->value.shape()));
    }
    p->value = *it->second;
  }
}

std::size_t raw_parameter_count(std::span<const NamedTensor> records) {
  std::size_t n = 0;
  for (const auto& rec : records) {
    if (rec.name.rfind(kEmaPrefix, 0) != 0) n += rec.value.size();
  }
  return n;
}

}  // namespace emi::checkpoint
