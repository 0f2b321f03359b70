// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentcache/agent_cache.hpp"
#include "agentcache/model_spec.hpp"
#include "agentcache/persistence.hpp"
#include "agentcache/tensor.hpp"

namespace agentcache {

/// FP32 K and V for one layer, each shaped (kv_heads, tokens, head_dim).
struct LayerKV {
    Tensor k;
    Tensor v;
};

struct PoolConfig {
    uint64_t budget_bytes = 0;
    std::filesystem::path cache_dir;
};

struct PoolStats {
    uint64_t resident_bytes = 0;
    uint64_t budget_bytes = 0;
    uint64_t agents_hot = 0;
    uint64_t agents_warm = 0;
    uint64_t evictions = 0;
    uint64_t reloads = 0;
    uint64_t eviction_failures = 0;
    bool over_budget = false;
};

/// New tokens to append: ids plus code-point offsets relative to `text`.
struct TokenAppend {
    std::span<const int32_t> ids;
    /// Code-point offsets into `text`, not into the whole transcript.
    std::span<const uint32_t> offsets;
    std::string_view text;
};

/// Per-agent isolated Q4 block storage with a resident byte budget.
///
/// Agents are Hot (resident) or Warm (persisted under cache_dir, not
/// resident). Exceeding the budget evicts whole agents in LRU order of a
/// logical clock that advances once per public operation; ties go to the
/// lexicographically smallest id. An agent with files on disk but no
/// registry entry is reloaded transparently on get_cache().
///
/// All public operations serialize on one reentrant mutex, also exposed as
/// io_guard() for callers that persist blocks from another thread.
class BlockPool {
public:
    BlockPool(ModelCacheSpec spec, PoolConfig config);

    const ModelCacheSpec& spec() const noexcept { return spec_; }
    const PoolConfig& config() const noexcept { return config_; }

    /// Quantizes and appends tokens, filling the tail block first. Creates
    /// the agent when unknown. Returns the agent's new token total.
    size_t append_tokens(const std::string& agent_id, std::span<const LayerKV> per_layer_kv, TokenAppend tokens);

    /// Appends already-quantized tokens, one (K, V) pair per layer.
    size_t append_quantized(const std::string& agent_id,
                            std::span<const std::pair<QuantizedTensor, QuantizedTensor>> per_layer, TokenAppend tokens);

    /// Resident view, valid until the next mutating call. Reloads Warm or
    /// on-disk agents. Throws NotFound.
    const AgentCache& get_cache(const std::string& agent_id);

    /// Persists the least recently touched Hot agent and drops its blocks.
    /// Throws EvictionFailed if persisting fails (the agent stays Hot).
    std::optional<std::string> evict_lru();

    /// Frees the agent's blocks and forgets it. Without delete_disk a Hot
    /// agent is persisted first so a later get_cache() reloads it.
    void drop_agent(const std::string& agent_id, bool delete_disk);

    /// Persists a Hot agent without evicting it.
    CacheFilePair save(const std::string& agent_id);

    /// Loads an agent from disk and marks it Hot, replacing any resident copy.
    const AgentCache& restore(const std::string& agent_id);

    /// Keeps the first `tokens` tokens and the transcript up to the start of
    /// token `tokens`.
    void truncate(const std::string& agent_id, size_t tokens);

    /// Clears the agent to zero tokens (creating it if needed). With
    /// delete_disk its persisted pair is removed too.
    void reset(const std::string& agent_id, bool delete_disk);

    /// Registers a complete cache (e.g. one returned by load_agent). Throws
    /// SpecMismatch on fingerprint mismatch.
    void insert(AgentCache cache);

    bool contains(const std::string& agent_id) const;
    bool on_disk(const std::string& agent_id) const;
    std::optional<CacheState> state(const std::string& agent_id) const;
    std::vector<std::string> agent_ids() const;
    std::vector<std::string> hot_agents() const;
    uint64_t clock() const;
    PoolStats stats() const;

    /// Checksum of an agent's resident blocks and metadata (0 if not Hot).
    uint64_t checksum(const std::string& agent_id) const;

    std::unique_lock<std::recursive_mutex> io_guard() const { return std::unique_lock(mutex_); }

    using EvictionListener = std::function<void(const std::string& agent_id, uint64_t bytes)>;
    void set_eviction_listener(EvictionListener listener);

private:
    struct Entry {
        AgentCache cache;
        bool dirty = true;  // resident content differs from disk
    };

    Entry& hot_entry(const std::string& agent_id);
    Entry& ensure_entry(const std::string& agent_id);
    void reload(Entry& e);
    void evict_entry(Entry& e);
    void enforce_budget();
    void append_text(AgentCache& c, TokenAppend tokens);
    uint64_t tick();

    ModelCacheSpec spec_;
    uint64_t fingerprint_;
    PoolConfig config_;
    mutable std::recursive_mutex mutex_;
    std::map<std::string, Entry> agents_;
    uint64_t clock_ = 0;
    uint64_t resident_ = 0;
    PoolStats counters_;
    EvictionListener on_evict_;
};

}  // namespace agentcache
