#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsq/data.hpp"
#include "fsq/model.hpp"
#include "fsq/training.hpp"

namespace fsq {

/// Checkpoint container, all integers little-endian:
///
///   "FSQ1"                 4-byte magic
///   u32 format_version     currently 1
///   u64 total_length       byte length of the whole file, CRC included
///   u32 config_length      followed by config_length bytes of UTF-8 JSON:
///                          {"model":{...},"channel_means":[...],"label_names":[...]}
///   u32 tensor_count       followed by tensor_count records:
///                            u32 name_length, name bytes, u32 ndim,
///                            ndim x u32 dims, numel x f32 payload
///   u32 history_length     followed by history_length bytes of JSON
///   u32 crc32              CRC-32 (IEEE) of every preceding byte
///
/// Only parameter values are stored; optimizer velocities restart at zero.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  History history;
  ChannelMeans channel_means{};
  std::vector<std::string> label_names;
};

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const History& history,
                                            const ChannelMeans& channel_means,
                                            const std::vector<std::string>& label_names);

/// Validates magic and version (FormatError), CRC (CorruptionError), then the
/// layout (FormatError) and tensor shapes against the embedded config
/// (CompatibilityError).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to "<path>.tmp" and renames over `path`. Throws IoError; on failure
/// nothing is left at `path`.
void save_checkpoint(const Model& model, const History& history, const ChannelMeans& channel_means,
                     const std::vector<std::string>& label_names, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

}  // namespace fsq
