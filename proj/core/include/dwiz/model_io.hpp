#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "dwiz/models.hpp"

namespace dwiz {

// .dwm container, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "DWZM"
//   4       4     u32 format version
//   8       8     u64 payload length P
//   16      P     payload:
//                   u64 metadata length J
//                   J bytes of UTF-8 JSON metadata (kind, model_id, dims,
//                     max_len, context_size, tags, vocabulary, tensor table)
//                   float32 tensor data, row-major, in tensor-table order
//   16+P    4     u32 CRC32 of the payload
//
// LSTM gate blocks are stored in (input, forget, cell, output) order.

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::string_view kModelMagic = "DWZM";
inline constexpr std::string_view kModelExtension = ".dwm";

enum class ModelKind { NoContext, Context };

std::string serialize_model(const NoContextModel& model);
std::string serialize_model(const ContextModel& model);

void save_model(const NoContextModel& model, const std::filesystem::path& path);
void save_model(const ContextModel& model, const std::filesystem::path& path);

struct LoadedModel {
  ModelKind kind = ModelKind::NoContext;
  std::shared_ptr<const NoContextModel> no_context;  // the encoder, for context models
  std::shared_ptr<const ContextModel> context;        // set for context models only
};

/// Throws ModelFormatError with kind BadMagic, Version, Truncated, Checksum or
/// Malformed.
LoadedModel deserialize_model(std::string_view bytes);
LoadedModel load_model(const std::filesystem::path& path);

std::shared_ptr<const NoContextModel> load_no_context_model(const std::filesystem::path& path);
std::shared_ptr<const ContextModel> load_context_model(const std::filesystem::path& path);

/// CRC32 of an entire file's bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);
std::uint32_t bytes_crc32(std::string_view bytes);

std::string hex32(std::uint32_t value);

}  // namespace dwiz
