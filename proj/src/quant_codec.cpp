// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/quant_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agentcache/bf16.hpp"
#include "agentcache/error.hpp"

namespace agentcache {

namespace {

constexpr uint16_t kBf16One = 0x3f80;

std::string shape_str(uint32_t h, uint32_t t, uint32_t d) {
    return "(" + std::to_string(h) + ", " + std::to_string(t) + ", " + std::to_string(d) + ")";
}

}  // namespace

void QuantizedTensor::validate() const {
    if (dim == 0 || dim % 8 != 0 || group_size == 0 || dim % group_size != 0) {
        throw Error(ErrorCode::ShapeError, "dim " + std::to_string(dim) + " incompatible with packing/group size " +
                                               std::to_string(group_size));
    }
    const size_t rows = static_cast<size_t>(heads) * tokens;
    if (packed.size() != rows * words_per_row() || scales.size() != rows * groups_per_row() ||
        biases.size() != scales.size()) {
        throw Error(ErrorCode::ShapeError, "quantized buffers do not match shape " + shape_str(heads, tokens, dim));
    }
}

QuantizedTensor QuantizedTensor::empty(uint32_t heads, uint32_t dim, uint32_t group_size) {
    QuantizedTensor q;
    q.heads = heads;
    q.dim = dim;
    q.group_size = group_size;
    return q;
}

GroupParams quantize_group(std::span<const float> values, std::span<uint8_t> codes) {
    if (values.empty() || codes.size() != values.size()) {
        throw Error(ErrorCode::InvalidArgument, "group and code buffers must be non-empty and equal length");
    }
    float lo = values[0];
    float hi = values[0];
    for (float v : values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "non-finite value in quantization group");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    const uint16_t bias = float_to_bf16(lo);
    const float bias_f = bf16_to_float(bias);
    if (!std::isfinite(bias_f)) throw Error(ErrorCode::InvalidValue, "group minimum overflows bfloat16");

    uint16_t scale = kBf16One;
    if (hi != lo) {
        // The range is formed in double so that |hi - lo| cannot overflow.
        const float step = static_cast<float>((static_cast<double>(hi) - static_cast<double>(lo)) / 15.0);
        scale = float_to_bf16(step);
        if (!std::isfinite(bf16_to_float(scale))) {
            throw Error(ErrorCode::InvalidValue, "group range overflows bfloat16");
        }
        if (bf16_to_float(scale) == 0.0f) scale = kBf16One;  // range below bf16 resolution
    }
    if (hi == lo) {
        std::fill(codes.begin(), codes.end(), uint8_t{0});
        return {scale, bias};
    }

    const float scale_f = bf16_to_float(scale);
    for (size_t i = 0; i < values.size(); ++i) {
        // nearbyint honours the default round-half-to-even mode
        const float c = std::nearbyint((values[i] - bias_f) / scale_f);
        codes[i] = static_cast<uint8_t>(std::clamp(c, 0.0f, 15.0f));
    }
    return {scale, bias};
}

void pack_codes(std::span<const uint8_t> codes, std::span<uint32_t> words) {
    if (codes.size() != words.size() * 8) throw Error(ErrorCode::ShapeError, "pack_codes: need 8 codes per word");
    for (size_t w = 0; w < words.size(); ++w) {
        uint32_t word = 0;
        for (size_t j = 0; j < 8; ++j) word |= static_cast<uint32_t>(codes[w * 8 + j] & 0xfu) << (4 * j);
        words[w] = word;
    }
}

void unpack_codes(std::span<const uint32_t> words, std::span<uint8_t> codes) {
    if (codes.size() != words.size() * 8) throw Error(ErrorCode::ShapeError, "unpack_codes: need 8 codes per word");
    for (size_t w = 0; w < words.size(); ++w) {
        for (size_t j = 0; j < 8; ++j) codes[w * 8 + j] = static_cast<uint8_t>((words[w] >> (4 * j)) & 0xfu);
    }
}

QuantizedTensor quantize_tensor(const Tensor& values, uint32_t group_size) {
    if (values.rank() != 3) throw Error(ErrorCode::ShapeError, "quantize_tensor expects (heads, tokens, dim)");
    const auto heads = static_cast<uint32_t>(values.dim(0));
    const auto tokens = static_cast<uint32_t>(values.dim(1));
    const auto dim = static_cast<uint32_t>(values.dim(2));
    if (dim == 0 || dim % 8 != 0 || group_size == 0 || dim % group_size != 0) {
        throw Error(ErrorCode::ShapeError, "dim " + std::to_string(dim) + " is not a multiple of 8 and group size " +
                                               std::to_string(group_size));
    }

    QuantizedTensor q = QuantizedTensor::empty(heads, dim, group_size);
    q.tokens = tokens;
    const size_t rows = static_cast<size_t>(heads) * tokens;
    q.packed.resize(rows * q.words_per_row());
    q.scales.resize(rows * q.groups_per_row());
    q.biases.resize(rows * q.groups_per_row());

    std::vector<uint8_t> codes(dim);
    const auto src = values.data();
    for (size_t r = 0; r < rows; ++r) {
        const auto row = src.subspan(r * dim, dim);
        for (uint32_t g = 0; g < q.groups_per_row(); ++g) {
            const auto p = quantize_group(row.subspan(g * group_size, group_size),
                                          std::span(codes).subspan(g * group_size, group_size));
            q.scales[r * q.groups_per_row() + g] = p.scale;
            q.biases[r * q.groups_per_row() + g] = p.bias;
        }
        pack_codes(codes, std::span(q.packed).subspan(r * q.words_per_row(), q.words_per_row()));
    }
    return q;
}

QuantizedTensor quantize_tensor(const Tensor& values, const ModelCacheSpec& spec, KVRole role) {
    const uint32_t dim = role == KVRole::Key ? spec.k_head_dim() : spec.v_head_dim();
    if (values.rank() != 3 || values.dim(0) != spec.num_kv_heads() || values.dim(2) != dim) {
        throw Error(ErrorCode::ShapeError, std::string(role == KVRole::Key ? "K" : "V") +
                                               " tensor shape does not match spec: expected (" +
                                               std::to_string(spec.num_kv_heads()) + ", t, " + std::to_string(dim) + ")");
    }
    return quantize_tensor(values, spec.group_size());
}

Tensor dequantize_tensor(const QuantizedTensor& q) {
    q.validate();
    Tensor out({q.heads, q.tokens, q.dim});
    auto dst = out.data();
    const size_t rows = static_cast<size_t>(q.heads) * q.tokens;
    for (size_t r = 0; r < rows; ++r) {
        for (uint32_t d = 0; d < q.dim; ++d) {
            const size_t gi = r * q.groups_per_row() + d / q.group_size;
            const float scale = bf16_to_float(q.scales[gi]);
            const float bias = bf16_to_float(q.biases[gi]);
            const auto code = static_cast<float>(unpack_code(q.packed, r * q.dim + d));
            dst[r * q.dim + d] = scale * code + bias;
        }
    }
    return out;
}

QuantizedTensor slice_tokens(const QuantizedTensor& q, uint32_t begin, uint32_t end) {
    if (begin > end || end > q.tokens) throw Error(ErrorCode::ShapeError, "token slice out of range");
    QuantizedTensor out = QuantizedTensor::empty(q.heads, q.dim, q.group_size);
    out.tokens = end - begin;
    const uint32_t wpr = q.words_per_row();
    const uint32_t gpr = q.groups_per_row();
    for (uint32_t h = 0; h < q.heads; ++h) {
        const size_t r0 = static_cast<size_t>(h) * q.tokens + begin;
        const size_t r1 = static_cast<size_t>(h) * q.tokens + end;
        out.packed.insert(out.packed.end(), q.packed.begin() + r0 * wpr, q.packed.begin() + r1 * wpr);
        out.scales.insert(out.scales.end(), q.scales.begin() + r0 * gpr, q.scales.begin() + r1 * gpr);
        out.biases.insert(out.biases.end(), q.biases.begin() + r0 * gpr, q.biases.begin() + r1 * gpr);
    }
    return out;
}

void append_tokens(QuantizedTensor& dst, const QuantizedTensor& tail) {
    if (dst.heads != tail.heads || dst.dim != tail.dim || dst.group_size != tail.group_size) {
        throw Error(ErrorCode::ShapeError, "append_tokens: head count, dim or group size differ");
    }
    if (tail.tokens == 0) return;
    if (dst.tokens == 0) {
        dst = tail;
        return;
    }
    QuantizedTensor out = QuantizedTensor::empty(dst.heads, dst.dim, dst.group_size);
    out.tokens = dst.tokens + tail.tokens;
    const uint32_t wpr = dst.words_per_row();
    const uint32_t gpr = dst.groups_per_row();
    out.packed.reserve(static_cast<size_t>(out.heads) * out.tokens * wpr);
    out.scales.reserve(static_cast<size_t>(out.heads) * out.tokens * gpr);
    out.biases.reserve(out.scales.capacity());
    auto copy_rows = [&](const QuantizedTensor& src, uint32_t h) {
        const size_t r0 = static_cast<size_t>(h) * src.tokens;
        const size_t r1 = r0 + src.tokens;
        out.packed.insert(out.packed.end(), src.packed.begin() + r0 * wpr, src.packed.begin() + r1 * wpr);
        out.scales.insert(out.scales.end(), src.scales.begin() + r0 * gpr, src.scales.begin() + r1 * gpr);
        out.biases.insert(out.biases.end(), src.biases.begin() + r0 * gpr, src.biases.begin() + r1 * gpr);
    };
    for (uint32_t h = 0; h < dst.heads; ++h) {
        copy_rows(dst, h);
        copy_rows(tail, h);
    }
    dst = std::move(out);
}

uint64_t q4_tensor_bytes(uint64_t heads, uint64_t dim, uint64_t tokens, uint64_t group_size) noexcept {
    const uint64_t elements = heads * dim * tokens;
    return elements / 2 + 2 * 2 * (elements / group_size);
}

uint64_t fp16_layer_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept {
    return uint64_t{spec.fp_bytes_per_element()} * spec.num_kv_heads() * (spec.k_head_dim() + spec.v_head_dim()) *
           tokens;
}

uint64_t q4_layer_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept {
    return q4_tensor_bytes(spec.num_kv_heads(), spec.k_head_dim(), tokens, spec.group_size()) +
           q4_tensor_bytes(spec.num_kv_heads(), spec.v_head_dim(), tokens, spec.group_size());
}

uint64_t fp16_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept {
    return fp16_layer_bytes(spec, tokens) * spec.num_layers();
}

uint64_t q4_bytes(const ModelCacheSpec& spec, uint64_t tokens) noexcept {
    return q4_layer_bytes(spec, tokens) * spec.num_layers();
}

double memory_ratio(uint32_t group_size) {
    if (group_size == 0) throw Error(ErrorCode::InvalidArgument, "group size must be >= 1");
    return (1.0 + 8.0 / group_size) / 4.0;
}

}  // namespace agentcache
