#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emi/model.hpp"

namespace emi::data {

// ---------------------------------------------------------------------------
// EMIF feature container
//
//   magic "EMIF" | version u16 LE | 3 blocks (visual, audio, text), each:
//   present u8 | rows u32 LE | dim u32 LE | rows*dim float32 LE, row-major
//
// Values are stored as 32-bit floats and widened to double on load.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kEmifMagic{'E', 'M', 'I', 'F'};
inline constexpr std::uint16_t kEmifVersion = 1;

struct Sample {
  std::string id;
  std::array<Tensor, kNumModalities> features;  // [L x d]; empty when absent
  std::array<bool, kNumModalities> present{false, false, false};
  Tensor target;  // [6]; empty when unknown

  bool has(Modality m) const { return present[static_cast<std::size_t>(m)]; }
};

struct EmifBlockInfo {
  bool present = false;
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::uint64_t offset = 0;  // byte offset of the block header
};

struct EmifInfo {
  std::uint16_t version = 0;
  std::array<EmifBlockInfo, kNumModalities> blocks;
  std::uint64_t size = 0;
};

std::vector<std::uint8_t> encode_feature_file(const Sample& sample);
// Throws FormatError carrying the byte offset of the first problem.
Sample decode_feature_file(std::span<const std::uint8_t> bytes, EmifInfo* info = nullptr);

void write_feature_file(const Sample& sample, const std::filesystem::path& path);
Sample read_feature_file(const std::filesystem::path& path, EmifInfo* info = nullptr);

// Absent modalities become a single all-zeros row of the configured width;
// presence flags are kept. Present blocks must match the configured width.
Sample apply_placeholder(Sample sample, const std::array<std::size_t, kNumModalities>& dims);

// ---------------------------------------------------------------------------
// Manifest (CSV): id,split,path,adm,amu,det,emp,exc,joy
// ---------------------------------------------------------------------------

enum class Split { train, val, test };
Split parse_split(const std::string& s);
const char* to_string(Split s);

inline constexpr const char* kManifestHeader = "id,split,path,adm,amu,det,emp,exc,joy";
inline constexpr std::array<const char*, kNumTargets> kTargetNames{"adm", "amu", "det", "emp", "exc", "joy"};

struct ManifestRow {
  std::string id;
  Split split = Split::train;
  std::string path;  // as written; relative paths resolve against the manifest directory
  std::array<double, kNumTargets> target{};
  bool labeled = true;  // false for sentinel (-1) targets
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;

  std::vector<const ManifestRow*> rows_in(Split split) const;
  std::filesystem::path resolve(const ManifestRow& row) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Loading and batching
// ---------------------------------------------------------------------------

struct AlignedSample {
  std::string id;
  std::array<Tensor, kNumModalities> features;  // [T x d_m]
  std::array<bool, kNumModalities> present{};
  Tensor target;  // [6]
  bool labeled = true;
};

struct SplitData {
  Split split = Split::train;
  std::vector<AlignedSample> samples;
  std::size_t placeholder_count = 0;  // samples with at least one absent modality
};

// Reads every sample of `split` in manifest order, applies the placeholder
// policy and aligns each modality to `align_length` rows.
SplitData load_split(const Manifest& manifest, Split split, const std::array<std::size_t, kNumModalities>& dims,
                     std::size_t align_length);

// Partition of [0, n) into batches. With shuffle, the order is a seeded
// permutation that depends only on (seed, epoch).
std::vector<std::vector<std::size_t>> batch_plan(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch, bool shuffle);
Batch assemble_batch(const SplitData& split, std::span<const std::size_t> indices);
std::vector<Batch> make_batches(const SplitData& split, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                                std::uint64_t epoch = 0);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class SynthMode { overlap, disjoint };
SynthMode parse_synth_mode(const std::string& s);
const char* to_string(SynthMode m);

struct SynthSpec {
  std::size_t n = 2000;
  std::array<std::size_t, kNumModalities> dims{64, 32, 48};
  std::uint64_t seed = 7;
  double noise = 0.0;  // target noise sigma
  SynthMode mode = SynthMode::overlap;
  std::size_t min_length = 48;
  std::size_t max_length = 192;
  double latent_scale = 0.75;
  double jitter = 0.3;        // per-frame feature noise
  double missing_rate = 0.0;  // fraction of samples with one or two modalities absent
  double train_fraction = 0.8;
  double val_fraction = 0.1;

  void validate() const;
  // Latent dimensions carried by each modality.
  std::array<std::vector<std::size_t>, kNumModalities> assignment() const;
};

struct SynthSummary {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t placeholder_samples = 0;
  std::filesystem::path manifest;
};

// Writes features/<id>.emif, manifest.csv and synth.json under out_dir.
// A pure function of the spec: identical specs produce identical bytes.
SynthSummary generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace emi::data
