// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/agent_cache.hpp"

#include <algorithm>

#include "agentcache/error.hpp"
#include "agentcache/hash.hpp"
#include "agentcache/utf8.hpp"

namespace agentcache {

std::string_view to_string(CacheState s) noexcept {
    switch (s) {
    case CacheState::Hot: return "hot";
    case CacheState::Warm: return "warm";
    case CacheState::Cold: return "cold";
    }
    return "unknown";
}

namespace {

template <typename T>
uint64_t hash_span(std::span<const T> v, uint64_t h) noexcept {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()), h);
}

uint64_t hash_tensor(const QuantizedTensor& q, uint64_t h) noexcept {
    const uint32_t dims[4] = {q.heads, q.tokens, q.dim, q.group_size};
    h = hash_span(std::span<const uint32_t>(dims), h);
    h = hash_span(std::span<const uint32_t>(q.packed), h);
    h = hash_span(std::span<const uint16_t>(q.scales), h);
    return hash_span(std::span<const uint16_t>(q.biases), h);
}

}  // namespace

size_t AgentCache::resident_bytes() const noexcept { return blocks_bytes(blocks); }

uint64_t AgentCache::checksum() const noexcept {
    uint64_t h = fnv1a64(agent_id);
    h = hash_combine(h, spec_fingerprint);
    for (const auto& layer : blocks) {
        for (const auto& b : layer) {
            const uint32_t meta[3] = {b.layer, b.block_index, b.token_count};
            h = hash_span(std::span<const uint32_t>(meta), h);
            h = hash_tensor(b.k, h);
            h = hash_tensor(b.v, h);
        }
    }
    h = fnv1a64(transcript_text, h);
    h = hash_span(std::span<const int32_t>(token_ids), h);
    return hash_span(std::span<const uint32_t>(char_offsets), h);
}

bool AgentCache::same_content(const AgentCache& o) const noexcept {
    return agent_id == o.agent_id && spec_fingerprint == o.spec_fingerprint && blocks == o.blocks &&
           transcript_text == o.transcript_text && token_ids == o.token_ids && char_offsets == o.char_offsets;
}

void AgentCache::validate(const ModelCacheSpec& spec) const {
    if (blocks.size() != spec.num_layers()) {
        throw Error(ErrorCode::ShapeError, "agent '" + agent_id + "' has " + std::to_string(blocks.size()) +
                                               " layers, spec has " + std::to_string(spec.num_layers()));
    }
    const size_t total = token_ids.size();
    for (uint32_t l = 0; l < blocks.size(); ++l) {
        size_t sum = 0;
        for (size_t b = 0; b < blocks[l].size(); ++b) {
            const auto& blk = blocks[l][b];
            const bool last = b + 1 == blocks[l].size();
            if (blk.layer != l || blk.block_index != b || blk.token_count == 0 ||
                blk.token_count > spec.block_tokens() || (!last && blk.token_count != spec.block_tokens())) {
                throw Error(ErrorCode::ShapeError, "block L" + std::to_string(l) + "_B" + std::to_string(b) +
                                                       " violates the block shape law");
            }
            if (blk.k.tokens != blk.token_count || blk.v.tokens != blk.token_count ||
                blk.k.heads != spec.num_kv_heads() || blk.v.heads != spec.num_kv_heads() ||
                blk.k.dim != spec.k_head_dim() || blk.v.dim != spec.v_head_dim() ||
                blk.k.group_size != spec.group_size() || blk.v.group_size != spec.group_size()) {
                throw Error(ErrorCode::ShapeError, "block L" + std::to_string(l) + "_B" + std::to_string(b) +
                                                       " tensors do not match the model spec");
            }
            blk.k.validate();
            blk.v.validate();
            sum += blk.token_count;
        }
        if (sum != total) {
            throw Error(ErrorCode::ShapeError, "layer " + std::to_string(l) + " holds " + std::to_string(sum) +
                                                   " tokens, transcript has " + std::to_string(total));
        }
    }
    if (char_offsets.size() != total) throw Error(ErrorCode::InvalidArgument, "char_offsets length != token count");
    if (!char_offsets.empty()) {
        if (char_offsets.front() != 0) throw Error(ErrorCode::InvalidArgument, "char_offsets must start at 0");
        if (!std::is_sorted(char_offsets.begin(), char_offsets.end())) {
            throw Error(ErrorCode::InvalidArgument, "char_offsets must be non-decreasing");
        }
        if (utf8::length(transcript_text) < char_offsets.back()) {
            throw Error(ErrorCode::InvalidArgument, "char_offsets point past the transcript");
        }
    }
}

AgentCache make_empty_cache(const ModelCacheSpec& spec, std::string agent_id) {
    AgentCache c;
    c.agent_id = std::move(agent_id);
    c.spec_fingerprint = spec_fingerprint(spec);
    c.blocks.resize(spec.num_layers());
    return c;
}

void append_to_layer(std::vector<KVBlock>& layer_blocks, uint32_t layer, const QuantizedTensor& k,
                     const QuantizedTensor& v, uint32_t block_tokens) {
    if (k.tokens != v.tokens) throw Error(ErrorCode::ShapeError, "K and V token counts differ");
    uint32_t consumed = 0;
    while (consumed < k.tokens) {
        if (layer_blocks.empty() || layer_blocks.back().token_count == block_tokens) {
            KVBlock blk;
            blk.layer = layer;
            blk.block_index = static_cast<uint32_t>(layer_blocks.size());
            blk.k = QuantizedTensor::empty(k.heads, k.dim, k.group_size);
            blk.v = QuantizedTensor::empty(v.heads, v.dim, v.group_size);
            layer_blocks.push_back(std::move(blk));
        }
        auto& tail = layer_blocks.back();
        const uint32_t take = std::min(block_tokens - tail.token_count, k.tokens - consumed);
        if (consumed == 0 && take == k.tokens) {
            append_tokens(tail.k, k);
            append_tokens(tail.v, v);
        } else {
            append_tokens(tail.k, slice_tokens(k, consumed, consumed + take));
            append_tokens(tail.v, slice_tokens(v, consumed, consumed + take));
        }
        tail.token_count += take;
        consumed += take;
    }
}

std::pair<QuantizedTensor, QuantizedTensor> concat_layer(const std::vector<KVBlock>& layer_blocks,
                                                         const ModelCacheSpec& spec) {
    auto k = QuantizedTensor::empty(spec.num_kv_heads(), spec.k_head_dim(), spec.group_size());
    auto v = QuantizedTensor::empty(spec.num_kv_heads(), spec.v_head_dim(), spec.group_size());
    for (const auto& b : layer_blocks) {
        append_tokens(k, b.k);
        append_tokens(v, b.v);
    }
    return {std::move(k), std::move(v)};
}

void truncate_blocks(LayerBlocks& blocks, uint32_t tokens, uint32_t block_tokens) {
    const size_t keep_blocks = (tokens + block_tokens - 1) / block_tokens;
    for (auto& layer : blocks) {
        if (layer.size() > keep_blocks) layer.resize(keep_blocks);
        if (!layer.empty()) {
            auto& tail = layer.back();
            const uint32_t tail_tokens = tokens - static_cast<uint32_t>(keep_blocks - 1) * block_tokens;
            if (tail.token_count > tail_tokens) {
                tail.k = slice_tokens(tail.k, 0, tail_tokens);
                tail.v = slice_tokens(tail.v, 0, tail_tokens);
                tail.token_count = tail_tokens;
            }
        }
    }
}

std::vector<uint32_t> block_token_counts(const LayerBlocks& blocks) {
    std::vector<uint32_t> counts;
    if (!blocks.empty()) {
        for (const auto& b : blocks.front()) counts.push_back(b.token_count);
    }
    return counts;
}

uint64_t blocks_bytes(const LayerBlocks& blocks) noexcept {
    uint64_t total = 0;
    for (const auto& layer : blocks) {
        for (const auto& b : layer) total += b.byte_size();
    }
    return total;
}

}  // namespace agentcache
