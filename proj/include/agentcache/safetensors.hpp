// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agentcache::safetensors {

// Container layout:
//   [8 bytes]  header length N, little-endian u64
//   [N bytes]  UTF-8 JSON: name -> {dtype, shape, data_offsets}, plus an
//              optional "__metadata__" string map; space padded to 8 bytes
//   [...]      tensor bytes, little-endian, offsets relative to this point

inline constexpr uint64_t kMaxHeaderBytes = 100ull << 20;

/// Element size in bytes for a dtype tag ("U32", "BF16", ...); 0 if unknown.
size_t dtype_size(std::string_view dtype) noexcept;

struct TensorEntry {
    std::string name;
    std::string dtype;
    std::vector<uint64_t> shape;
    uint64_t begin = 0;  // relative to the data section
    uint64_t end = 0;

    uint64_t nbytes() const noexcept { return end - begin; }
};

struct Header {
    std::vector<TensorEntry> tensors;  // sorted by name
    std::map<std::string, std::string> metadata;
    uint64_t header_bytes = 0;  // N, excluding the 8-byte prefix
    uint64_t data_bytes = 0;

    uint64_t data_start() const noexcept { return 8 + header_bytes; }
    uint64_t total_bytes() const noexcept { return data_start() + data_bytes; }
    const TensorEntry* find(std::string_view name) const noexcept;
};

/// Builds a file image. Tensors are laid out in name order and the header
/// is serialized with sorted keys, so equal inputs give identical bytes.
class Writer {
public:
    void add(std::string name, std::string dtype, std::vector<uint64_t> shape, std::vector<uint8_t> bytes);
    void set_metadata(std::string key, std::string value);
    std::string serialize() const;

private:
    struct Pending {
        std::string dtype;
        std::vector<uint64_t> shape;
        std::vector<uint8_t> bytes;
    };
    std::map<std::string, Pending> tensors_;
    std::map<std::string, std::string> metadata_;
};

/// Parses and validates a header. `prefix` holds at least the first 8 + N
/// bytes of the file; `file_size` is the full size on disk. Throws
/// CorruptFile on any inconsistency, including a truncated data section.
Header parse_header(std::span<const uint8_t> prefix, uint64_t file_size);

/// Reads only the header of a file on disk.
Header read_header(const std::filesystem::path& path);

std::vector<uint8_t> to_le_bytes(std::span<const uint32_t> words);
std::vector<uint8_t> to_le_bytes(std::span<const uint16_t> halves);
std::vector<uint32_t> u32_from_le(std::span<const uint8_t> bytes);
std::vector<uint16_t> u16_from_le(std::span<const uint8_t> bytes);

}  // namespace agentcache::safetensors
