// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "agentcache/model_spec.hpp"
#include "agentcache/tensor.hpp"

namespace agentcache {

/// 4-bit group-affine quantized tensor of logical shape (heads, tokens, dim).
///
/// Groups and packing both run along `dim`. Each 32-bit word holds eight
/// consecutive codes; code j of a word occupies bits [4j, 4j+4).
///   packed: (heads, tokens, dim/8)           uint32
///   scales: (heads, tokens, dim/group_size)  bfloat16 bit patterns
///   biases: (heads, tokens, dim/group_size)  bfloat16 bit patterns
/// Element value is scale * code + bias.
struct QuantizedTensor {
    uint32_t heads = 0;
    uint32_t tokens = 0;
    uint32_t dim = 0;
    uint32_t group_size = 64;
    std::vector<uint32_t> packed;
    std::vector<uint16_t> scales;
    std::vector<uint16_t> biases;

    uint32_t words_per_row() const noexcept { return dim / 8; }
    uint32_t groups_per_row() const noexcept { return dim / group_size; }
    size_t byte_size() const noexcept { return packed.size() * 4 + scales.size() * 2 + biases.size() * 2; }

    /// Checks the length/shape invariants; throws ShapeError.
    void validate() const;

    static QuantizedTensor empty(uint32_t heads, uint32_t dim, uint32_t group_size);

    bool operator==(const QuantizedTensor&) const = default;
};

struct GroupParams {
    uint16_t scale;  // bfloat16 bits
    uint16_t bias;   // bfloat16 bits
};

/// Quantizes one group. Writes `values.size()` codes in [0, 15].
/// bias = bf16(min), scale = bf16((max - min) / 15); a constant group gets
/// scale 1 and all-zero codes. Throws InvalidValue on NaN/Inf.
GroupParams quantize_group(std::span<const float> values, std::span<uint8_t> codes);

enum class KVRole { Key, Value };

/// values has shape (heads, tokens, dim) with dim % group_size == 0.
QuantizedTensor quantize_tensor(const Tensor& values, uint32_t group_size);

/// Same, but checks the shape against the K or V layout of `spec`.
QuantizedTensor quantize_tensor(const Tensor& values, const ModelCacheSpec& spec, KVRole role);

Tensor dequantize_tensor(const QuantizedTensor& q);

/// Extracts code `index` (along the flattened packed stream) of a tensor.
inline uint8_t unpack_code(std::span<const uint32_t> packed, size_t index) noexcept {
    return static_cast<uint8_t>((packed[index / 8] >> (4 * (index % 8))) & 0xfu);
}

void pack_codes(std::span<const uint8_t> codes, std::span<uint32_t> words);
void unpack_codes(std::span<const uint32_t> words, std::span<uint8_t> codes);

/// Tokens [begin, end) of every head.
QuantizedTensor slice_tokens(const QuantizedTensor& q, uint32_t begin, uint32_t end);

/// Appends `tail` along the token axis. Heads, dim and group size must match.
void append_tokens(QuantizedTensor& dst, const QuantizedTensor& tail);

// ---- memory accounting --------------------------------------------------

/// Bytes of one quantized tensor with the given shape.
uint64_t q4_tensor_bytes(uint64_t heads, uint64_t dim, uint64_t tokens, uint64_t group_size) noexcept;

uint64_t fp16_layer_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept;
uint64_t q4_layer_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept;

/// Whole-model K+V footprint for `tokens` cached tokens.
uint64_t fp16_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept;
uint64_t q4_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept;

/// Q4 / FP16 byte ratio, (1 + 8/g) / 4.
double memory_ratio(uint32_t group_size);

}  // namespace agentcache
