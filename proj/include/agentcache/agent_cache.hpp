// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agentcache/model_spec.hpp"
#include "agentcache/quant_codec.hpp"

namespace agentcache {

/// One block_tokens-sized slice of one layer's K and V.
struct KVBlock {
    uint32_t layer = 0;
    uint32_t block_index = 0;  // token offset is block_index * block_tokens
    uint32_t token_count = 0;
    QuantizedTensor k;
    QuantizedTensor v;

    size_t byte_size() const noexcept { return k.byte_size() + v.byte_size(); }
    bool operator==(const KVBlock&) const = default;
};

/// blocks[layer][block]
using LayerBlocks = std::vector<std::vector<KVBlock>>;

/// Hot: resident in memory. Warm: persisted, not resident. Cold: nothing cached.
enum class CacheState { Hot, Warm, Cold };

std::string_view to_string(CacheState s) noexcept;

struct AgentCache {
    std::string agent_id;
    uint64_t spec_fingerprint = 0;
    LayerBlocks blocks;
    std::string transcript_text;
    std::vector<int32_t> token_ids;
    /// Code-point offset in transcript_text where each token begins.
    std::vector<uint32_t> char_offsets;
    uint64_t last_touched = 0;
    CacheState state = CacheState::Hot;

    size_t token_count() const noexcept { return token_ids.size(); }
    size_t resident_bytes() const noexcept;
    size_t block_count() const noexcept { return blocks.empty() ? 0 : blocks.front().size(); }

    /// Digest of block bytes and transcript metadata; ignores clock and state.
    uint64_t checksum() const noexcept;

    /// Block tensors and metadata equal bit for bit (clock/state ignored).
    bool same_content(const AgentCache& other) const noexcept;

    /// Throws ShapeError/InvalidArgument if any structural invariant fails.
    void validate(const ModelCacheSpec& spec) const;
};

/// Empty cache with one (empty) block list per layer.
AgentCache make_empty_cache(const ModelCacheSpec& spec, std::string agent_id);

/// Appends quantized tokens to one layer, filling the tail block first.
void append_to_layer(std::vector<KVBlock>& layer_blocks, uint32_t layer, const QuantizedTensor& k,
                     const QuantizedTensor& v, uint32_t block_tokens);

/// Concatenated K and V of one layer across all of its blocks.
std::pair<QuantizedTensor, QuantizedTensor> concat_layer(const std::vector<KVBlock>& layer_blocks,
                                                         const ModelCacheSpec& spec);

/// Keeps only the first `tokens` tokens of every layer.
void truncate_blocks(LayerBlocks& blocks, uint32_t tokens, uint32_t block_tokens);

/// Per-block token counts of the first layer (identical across layers).
std::vector<uint32_t> block_token_counts(const LayerBlocks& blocks);

/// Sum over blocks of their quantized byte cost.
uint64_t blocks_bytes(const LayerBlocks& blocks) noexcept;

}  // namespace agentcache
