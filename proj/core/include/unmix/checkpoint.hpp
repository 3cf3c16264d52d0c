#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "unmix/parameter.hpp"

namespace unmix {

/// Binary container, all integers little-endian:
///
///   "UMX1"                      magic + format version
///   u32 record_count
///   record_count × {
///     u32 name_length, name bytes (UTF-8)
///     u32 rank, rank × u64 extents
///     float32 payload, product(extents) values
///   }
///   optional trailer: "META", u32 byte_length, "key=value\n" lines
///
/// The trailer holds run metadata (step, config hash, rng state, ...).
struct Checkpoint {
  NamedTensors tensors;
  std::map<std::string, std::string> metadata;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'M', 'X', '1'};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatVersionError for "UMX<other>", FormatError for anything else
/// malformed (with the byte offset where parsing stopped).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a, used for config hashes and checkpoint fingerprints.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(const std::string& text);

}  // namespace unmix
