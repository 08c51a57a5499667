#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emi/model.hpp"
#include "emi/optim.hpp"

namespace emi::checkpoint {

// EMIC container: magic "EMIC" | version u16 LE | records until end of file,
// each: name length u16 | UTF-8 name | rank u8 | extents u32 LE | float64 LE data.
inline constexpr std::array<char, 4> kEmicMagic{'E', 'M', 'I', 'C'};
inline constexpr std::uint16_t kEmicVersion = 1;
inline constexpr const char* kEmaPrefix = "ema/";

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<std::uint8_t> encode(std::span<const NamedTensor> records);
std::vector<NamedTensor> decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, std::span<const NamedTensor> records);
std::vector<NamedTensor> read(const std::filesystem::path& path);

// Parameters under their own names followed by the EMA shadows under
// "ema/<name>".
std::vector<NamedTensor> collect(const EmotionModel& model, const optim::Ema* ema);

enum class Weights { raw, ema };

// Loads the selected weight set into `model`; every parameter must be
// present with a matching shape.
void restore(EmotionModel& model, std::span<const NamedTensor> records, Weights which);

// Number of scalars in the raw (non-EMA) records.
std::size_t raw_parameter_count(std::span<const NamedTensor> records);

}  // namespace emi::checkpoint
