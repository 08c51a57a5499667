#include "emi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "binio.hpp"
#include "emi/layers.hpp"
#include "json.hpp"

namespace emi::data {

// ---------------------------------------------------------------------------
// EMIF
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_feature_file(const Sample& sample) {
  binio::Writer w;
  w.bytes(kEmifMagic.data(), kEmifMagic.size());
  w.u16(kEmifVersion);
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const Tensor& f = sample.features[m];
    if (!sample.present[m]) {
      w.u8(0);
      w.u32(0);
      w.u32(0);
      continue;
    }
    if (f.rank() != 2) {
      throw DimensionError(std::string(kModalityNames[m]) + " features must be [rows x dim], got " +
                           shape_to_string(f.shape()));
    }
    if (f.dim(0) > std::numeric_limits<std::uint32_t>::max() || f.dim(1) > std::numeric_limits<std::uint32_t>::max()) {
      throw DimensionError("feature block too large for EMIF");
    }
    require_finite(f, "write_feature_file");
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(f.dim(0)));
    w.u32(static_cast<std::uint32_t>(f.dim(1)));
    for (double v : f.data()) w.f32(static_cast<float>(v));
  }
  return std::move(w.buffer());
}

Sample decode_feature_file(std::span<const std::uint8_t> bytes, EmifInfo* info) {
  binio::Reader r(bytes);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kEmifMagic) throw FormatError("bad magic, expected EMIF", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kEmifVersion) {
    throw FormatError("unsupported EMIF version " + std::to_string(version), version_at);
  }
  EmifInfo local;
  local.version = version;
  local.size = bytes.size();
  Sample sample;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    EmifBlockInfo& block = local.blocks[m];
    block.offset = r.offset();
    const std::uint8_t present = r.u8("present flag");
    if (present > 1) throw FormatError("present flag must be 0 or 1", block.offset);
    const std::uint64_t rows_at = r.offset();
    block.rows = r.u32("row count");
    block.dim = r.u32("dimension");
    block.present = present == 1;
    if (!block.present) {
      if (block.rows != 0) throw FormatError("absent block must have zero rows", rows_at);
      continue;
    }
    if (block.rows == 0 || block.dim == 0) throw FormatError("present block has an empty extent", rows_at);
    const std::uint64_t count = static_cast<std::uint64_t>(block.rows) * block.dim;
    r.require(count * 4, "feature payload");
    std::vector<double> values(count);
    for (auto& v : values) {
      const std::uint64_t at = r.offset();
      const float f = r.f32("feature value");
      if (!std::isfinite(f)) throw FormatError("non-finite feature value", at);
      v = static_cast<double>(f);
    }
    sample.features[m] = Tensor({block.rows, block.dim}, std::move(values));
    sample.present[m] = true;
  }
  if (!r.done()) throw FormatError("trailing bytes after the text block", r.offset());
  if (info) *info = local;
  return sample;
}

void write_feature_file(const Sample& sample, const std::filesystem::path& path) {
  binio::write_file(path, encode_feature_file(sample));
}

Sample read_feature_file(const std::filesystem::path& path, EmifInfo* info) {
  const auto bytes = binio::read_file(path);
  try {
    return decode_feature_file(bytes, info);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

Sample apply_placeholder(Sample sample, const std::array<std::size_t, kNumModalities>& dims) {
  if (std::none_of(sample.present.begin(), sample.present.end(), [](bool p) { return p; })) {
    throw DataError("sample '" + sample.id + "' has no modality present");
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (sample.present[m]) {
      if (sample.features[m].dim(1) != dims[m]) {
        throw ConfigError("sample '" + sample.id + "': " + kModalityNames[m] + " dimension " +
                          std::to_string(sample.features[m].dim(1)) + " differs from configured " +
                          std::to_string(dims[m]));
      }
    } else {
      sample.features[m] = Tensor::zeros({1, dims[m]});
    }
  }
  return sample;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "' (expected train|val|test)");
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<const ManifestRow*> Manifest::rows_in(Split split) const {
  std::vector<const ManifestRow*> out;
  for (const auto& row : rows) {
    if (row.split == split) out.push_back(&row);
  }
  return out;
}

std::filesystem::path Manifest::resolve(const ManifestRow& row) const {
  std::filesystem::path p(row.path);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest line " + std::to_string(line_no) + ": invalid number '" + s + "'");
  }
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw DataError("manifest header must be '" + std::string(kManifestHeader) + "', got '" + line + "'");
  }
  std::unordered_set<std::string> ids;
  std::unordered_map<std::string, Split> path_split;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3 + kNumTargets) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 9 fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestRow row;
    row.id = fields[0];
    if (row.id.empty()) throw DataError("manifest line " + std::to_string(line_no) + ": empty id");
    row.split = parse_split(fields[1]);
    row.path = fields[2];
    bool all_sentinel = true;
    for (std::size_t i = 0; i < kNumTargets; ++i) {
      row.target[i] = parse_real(fields[3 + i], line_no);
      all_sentinel = all_sentinel && row.target[i] == -1.0;
    }
    if (all_sentinel && row.split == Split::test) {
      row.labeled = false;
    } else {
      for (double t : row.target) {
        if (!(t >= 0.0 && t <= 1.0)) {
          throw DataError("manifest line " + std::to_string(line_no) + ": target outside [0, 1] for '" + row.id + "'");
        }
      }
    }
    if (!ids.insert(row.id).second) throw DataError("manifest: duplicate id '" + row.id + "'");
    auto [it, inserted] = path_split.emplace(row.path, row.split);
    if (!inserted && it->second != row.split) {
      throw DataError("manifest: feature file '" + row.path + "' appears in both " + to_string(it->second) +
                      " and " + to_string(row.split));
    }
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  out << std::setprecision(17);
  for (const auto& row : manifest.rows) {
    out << row.id << ',' << to_string(row.split) << ',' << row.path;
    for (double t : row.target) out << ',' << t;
    out << '\n';
  }
  const std::string text = out.str();
  binio::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

// ---------------------------------------------------------------------------
// Loading and batching
// ---------------------------------------------------------------------------

SplitData load_split(const Manifest& manifest, Split split, const std::array<std::size_t, kNumModalities>& dims,
                     std::size_t align_length) {
  SplitData out;
  out.split = split;
  for (const ManifestRow* row : manifest.rows_in(split)) {
    Sample raw = read_feature_file(manifest.resolve(*row));
    raw.id = row->id;
    Sample filled = apply_placeholder(std::move(raw), dims);
    AlignedSample s;
    s.id = row->id;
    s.present = filled.present;
    if (!std::all_of(s.present.begin(), s.present.end(), [](bool p) { return p; })) ++out.placeholder_count;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      s.features[m] = adaptive_avg_pool(filled.features[m], align_length);
    }
    s.target = Tensor({kNumTargets}, std::vector<double>(row->target.begin(), row->target.end()));
    s.labeled = row->labeled;
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
    Rng rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

Batch assemble_batch(const SplitData& split, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("cannot assemble an empty batch");
  Batch batch;
  const std::size_t bsz = indices.size();
  const AlignedSample& first = split.samples.at(indices[0]);
  const std::size_t steps = first.features[0].dim(0);
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::size_t d = first.features[m].dim(1);
    std::vector<double> stacked;
    stacked.reserve(bsz * steps * d);
    for (std::size_t idx : indices) {
      const Tensor& f = split.samples.at(idx).features[m];
      if (f.dim(0) != steps || f.dim(1) != d) {
        throw DimensionError("assemble_batch: sample features not aligned, " + shape_to_string(f.shape()));
      }
      stacked.insert(stacked.end(), f.data().begin(), f.data().end());
    }
    batch.features[m] = Tensor({bsz, steps, d}, std::move(stacked));
  }
  std::vector<double> targets;
  targets.reserve(bsz * kNumTargets);
  for (std::size_t idx : indices) {
    const AlignedSample& s = split.samples[idx];
    batch.ids.push_back(s.id);
    targets.insert(targets.end(), s.target.data().begin(), s.target.data().end());
  }
  batch.targets = Tensor({bsz, kNumTargets}, std::move(targets));
  return batch;
}

std::vector<Batch> make_batches(const SplitData& split, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                                std::uint64_t epoch) {
  if (split.samples.empty()) throw DataError(std::string("split '") + to_string(split.split) + "' is empty");
  std::vector<Batch> out;
  for (const auto& indices : batch_plan(split.samples.size(), batch_size, seed, epoch, shuffle)) {
    out.push_back(assemble_batch(split, indices));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

SynthMode parse_synth_mode(const std::string& s) {
  if (s == "overlap") return SynthMode::overlap;
  if (s == "disjoint") return SynthMode::disjoint;
  throw ConfigError("unknown synthetic mode '" + s + "' (expected overlap|disjoint)");
}

const char* to_string(SynthMode m) { return m == SynthMode::overlap ? "overlap" : "disjoint"; }

void SynthSpec::validate() const {
  if (n < 2) throw ConfigError("synthetic dataset needs n >= 2");
  for (auto d : dims) {
    if (d == 0) throw ConfigError("synthetic feature dimensions must be positive");
  }
  if (min_length == 0 || min_length > max_length) throw ConfigError("invalid sequence length range");
  if (!(noise >= 0.0) || !(jitter >= 0.0) || !(latent_scale > 0.0)) throw ConfigError("invalid noise settings");
  if (!(missing_rate >= 0.0 && missing_rate <= 1.0)) throw ConfigError("missing rate must lie in [0, 1]");
  if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction <= 1.0)) {
    throw ConfigError("invalid split fractions");
  }
  if (mode == SynthMode::disjoint) {
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      if (dims[m] < 2) throw ConfigError("disjoint mode needs at least 2 feature dims per modality");
    }
  }
}

std::array<std::vector<std::size_t>, kNumModalities> SynthSpec::assignment() const {
  std::array<std::vector<std::size_t>, kNumModalities> out;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (mode == SynthMode::overlap) {
      for (std::size_t i = 0; i < kNumTargets; ++i) out[m].push_back(i);
    } else {
      out[m] = {2 * m, 2 * m + 1};
    }
  }
  return out;
}

SynthSummary generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto assignment = spec.assignment();

  // Fixed random linear maps from each modality's latent subset to features.
  std::array<Tensor, kNumModalities> maps;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::size_t k = assignment[m].size();
    maps[m] = Tensor({spec.dims[m], k});
    const double s = 1.0 / std::sqrt(static_cast<double>(k));
    for (auto& v : maps[m].data()) v = normal(rng) * s;
  }

  const std::size_t n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * spec.n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * spec.n));
  Manifest manifest;
  manifest.base_dir = out_dir;
  SynthSummary summary;
  const int width = static_cast<int>(std::to_string(spec.n).size());
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);

  for (std::size_t idx = 0; idx < spec.n; ++idx) {
    std::ostringstream id;
    id << "s" << std::setw(width) << std::setfill('0') << idx;
    Sample sample;
    sample.id = id.str();

    std::array<double, kNumTargets> latent{};
    for (auto& u : latent) u = normal(rng) * spec.latent_scale;
    ManifestRow row;
    row.id = sample.id;
    row.split = idx < n_train ? Split::train : (idx < n_train + n_val ? Split::val : Split::test);
    row.path = "features/" + sample.id + ".emif";
    for (std::size_t i = 0; i < kNumTargets; ++i) {
      const double t = ops::sigmoid(latent[i]) + spec.noise * normal(rng);
      row.target[i] = std::clamp(t, 0.0, 1.0);
    }

    // Which modalities survive (at least one always does).
    std::array<bool, kNumModalities> present{true, true, true};
    if (spec.missing_rate > 0.0 && unit(rng) < spec.missing_rate) {
      const std::size_t keep = static_cast<std::size_t>(unit(rng) * kNumModalities) % kNumModalities;
      const bool keep_two = unit(rng) < 0.5;
      for (std::size_t m = 0; m < kNumModalities; ++m) present[m] = m == keep;
      if (keep_two) present[(keep + 1) % kNumModalities] = true;
      ++summary.placeholder_samples;
    }

    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const std::size_t rows = length(rng);
      const std::size_t d = spec.dims[m];
      const auto& dims_m = assignment[m];
      std::vector<double> signal(d, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t c = 0; c < dims_m.size(); ++c) signal[j] += maps[m].at(j, c) * latent[dims_m[c]];
      }
      Tensor f({rows, d});
      for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
          f.at(t, j) = static_cast<double>(static_cast<float>(signal[j] + spec.jitter * normal(rng)));
        }
      }
      if (present[m]) {
        sample.features[m] = std::move(f);
        sample.present[m] = true;
      }
    }
    write_feature_file(sample, out_dir / row.path);
    switch (row.split) {
      case Split::train: ++summary.train; break;
      case Split::val: ++summary.val; break;
      case Split::test: ++summary.test; break;
    }
    manifest.rows.push_back(std::move(row));
  }

  summary.manifest = out_dir / "manifest.csv";
  write_manifest(manifest, summary.manifest);

  nlohmann::ordered_json side;
  side["n"] = spec.n;
  side["dims"] = {{"visual", spec.dims[0]}, {"audio", spec.dims[1]}, {"text", spec.dims[2]}};
  side["seed"] = spec.seed;
  side["noise"] = spec.noise;
  side["mode"] = to_string(spec.mode);
  side["assignment"] = {{"visual", assignment[0]}, {"audio", assignment[1]}, {"text", assignment[2]}};
  side["min_length"] = spec.min_length;
  side["max_length"] = spec.max_length;
  side["latent_scale"] = spec.latent_scale;
  side["jitter"] = spec.jitter;
  side["missing_rate"] = spec.missing_rate;
  side["train_fraction"] = spec.train_fraction;
  side["val_fraction"] = spec.val_fraction;
  side["splits"] = {{"train", summary.train}, {"val", summary.val}, {"test", summary.test}};
  side["placeholder_samples"] = summary.placeholder_samples;
  const std::string text = side.dump(2) + "\n";
  binio::write_file(out_dir / "synth.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  return summary;
}

}  // namespace emi::data
