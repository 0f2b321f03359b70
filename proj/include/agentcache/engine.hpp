// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentcache/agent_cache.hpp"
#include "agentcache/batch_cache.hpp"
#include "agentcache/block_pool.hpp"
#include "agentcache/model_spec.hpp"

namespace agentcache {

struct Tokenized {
    std::vector<int32_t> ids;
    /// Code-point offset where each token begins, relative to the input text.
    std::vector<uint32_t> offsets;

    size_t size() const noexcept { return ids.size(); }
};

struct DecodeOutput {
    std::vector<int32_t> next_ids;    // one per batch row
    std::vector<std::string> texts;   // decoded text of each next token
    std::vector<LayerKV> kv;          // per layer, (batch, kv_heads, 1, head_dim)
};

struct EngineCounters {
    uint64_t tokens_prefilled = 0;
    uint64_t prefill_calls = 0;
    uint64_t decode_steps = 0;
    uint64_t decode_rows = 0;
    uint64_t reentrancy_violations = 0;
};

/// The model behind the scheduler. All calls are made from one lane.
class Engine {
public:
    virtual ~Engine() = default;

    virtual const ModelCacheSpec& spec() const noexcept = 0;

    virtual Tokenized tokenize(std::string_view text) = 0;

    /// K/V for `ids`, which continue `existing` at position existing.token_count().
    /// Each tensor is (kv_heads, ids.size(), head_dim).
    virtual std::vector<LayerKV> prefill_chunk(const std::string& agent_id, std::span<const int32_t> ids,
                                               const AgentCache& existing) = 0;

    /// Emits one token per batch row together with that token's K/V.
    virtual DecodeOutput decode_step(const BatchCache& batch, std::span<const int32_t> last_tokens) = 0;

    virtual EngineCounters counters() const = 0;
};

/// Deterministic stand-in model.
///
/// A token is an optional run of whitespace followed by at most
/// kMaxTokenChars non-whitespace code points; its id hashes the token text.
/// K/V entries are uniform in [-1, 1), seeded by (agent, layer, position,
/// token id). Decoded tokens are " t<n>" with n hashed from (agent, position),
/// so tokenizing decoded text reproduces the decoded ids.
class SyntheticEngine final : public Engine {
public:
    static constexpr size_t kMaxTokenChars = 12;

    explicit SyntheticEngine(ModelCacheSpec spec);

    const ModelCacheSpec& spec() const noexcept override { return spec_; }
    Tokenized tokenize(std::string_view text) override;
    std::vector<LayerKV> prefill_chunk(const std::string& agent_id, std::span<const int32_t> ids,
                                       const AgentCache& existing) override;
    DecodeOutput decode_step(const BatchCache& batch, std::span<const int32_t> last_tokens) override;
    EngineCounters counters() const override;

    /// Every call touching this agent throws EngineFailure.
    void inject_failure(const std::string& agent_id);
    void clear_failures();

    static int32_t token_id(std::string_view piece) noexcept;
    static std::string decode_text(std::string_view agent_id, uint64_t position);
    /// K/V value of one element; exposed for tests.
    static float kv_value(std::string_view agent_id, uint32_t layer, uint64_t position, int32_t token, bool is_value,
                          uint32_t head, uint32_t d) noexcept;

private:
    class Guard;
    void check_failure(const std::string& agent_id) const;

    ModelCacheSpec spec_;
    std::atomic<int> in_flight_{0};
    mutable std::mutex mutex_;
    EngineCounters counters_;
    std::set<std::string> failing_;
};

/// Small spec used by scenarios and tests: 4 layers (the last one global,
/// others sliding window 64), 2 KV heads, 4 query heads, head dim 64,
/// block 64, group 64.
ModelCacheSpec tiny_spec();

/// "tiny" or any preset name.
ModelCacheSpec resolve_spec(std::string_view name);

}  // namespace agentcache
