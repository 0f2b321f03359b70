// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agentcache/agent_cache.hpp"
#include "agentcache/block_pool.hpp"
#include "agentcache/model_spec.hpp"
#include "agentcache/quant_codec.hpp"
#include "agentcache/tensor.hpp"

namespace agentcache {

inline constexpr uint32_t kDefaultMaxBatch = 2;

/// Several agents' quantized caches stacked along a batch axis and
/// left-padded to a common length.
///
/// Each layer's K and V are stored as one QuantizedTensor whose head axis is
/// (batch * kv_heads), i.e. logical shape (batch, kv_heads, padded_len, dim).
/// Row r's tokens occupy [padded_len - valid_lens[r], padded_len); padding
/// holds code 0, scale 1, bias 0 and so dequantizes to exactly 0.
struct BatchCache {
    uint32_t batch = 0;
    uint32_t kv_heads = 0;
    uint32_t padded_len = 0;
    uint64_t spec_fingerprint = 0;
    std::vector<std::string> agent_ids;
    std::vector<uint32_t> valid_lens;
    std::vector<std::pair<QuantizedTensor, QuantizedTensor>> layers;

    uint32_t pad_start(uint32_t row) const { return padded_len - valid_lens.at(row); }
};

/// Throws InvalidArgument for an empty list or more than max_batch caches,
/// SpecMismatch when fingerprints differ from `spec`.
BatchCache merge(std::span<const AgentCache* const> caches, const ModelCacheSpec& spec,
                 uint32_t max_batch = kDefaultMaxBatch);

/// Quantizes one step of new K/V per layer, each shaped
/// (batch, kv_heads, t_new, head_dim), and appends it at the right edge of
/// every row.
BatchCache update_and_fetch(BatchCache b, std::span<const LayerKV> new_kv, const ModelCacheSpec& spec);

/// Per-row block lists with padding removed, re-blocked at block_tokens.
std::vector<LayerBlocks> extract(const BatchCache& b, const ModelCacheSpec& spec);

/// Visibility of key j to query i for each batch row, shape (batch, q_len, k_len).
/// Query i sits at absolute position k_len - q_len + i. Position j is
/// visible iff j <= pos(i), j > pos(i) - window for sliding layers, and j
/// is not left padding of its row.
struct AttentionMask {
    uint32_t batch = 0;
    uint32_t q_len = 0;
    uint32_t k_len = 0;
    std::vector<uint8_t> visible;

    bool is_visible(uint32_t row, uint32_t i, uint32_t j) const {
        return visible[(static_cast<size_t>(row) * q_len + i) * k_len + j] != 0;
    }
};

AttentionMask build_mask(const AttentionKind& kind, uint32_t q_len, uint32_t k_len,
                         std::span<const uint32_t> valid_lens);

/// Reference attention over a batch's layer: dequantize, group query heads
/// as (batch, kv_heads, n_rep, q_len, dim), softmax(QK^T / sqrt(d_k) + mask) V
/// with FP64 accumulation. q is (batch, query_heads, q_len, k_head_dim);
/// returns (batch, query_heads, q_len, v_head_dim). Queries are aligned to
/// the right edge of the batch.
Tensor oracle_attention(const Tensor& q, const BatchCache& b, uint32_t layer, const ModelCacheSpec& spec);

}  // namespace agentcache
