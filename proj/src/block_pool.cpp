// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/block_pool.hpp"

#include <algorithm>
#include <set>

#include "agentcache/error.hpp"
#include "agentcache/quant_codec.hpp"
#include "agentcache/utf8.hpp"

namespace agentcache {

BlockPool::BlockPool(ModelCacheSpec spec, PoolConfig config)
    : spec_(std::move(spec)), fingerprint_(spec_fingerprint(spec_)), config_(std::move(config)) {
    counters_.budget_bytes = config_.budget_bytes;
}

uint64_t BlockPool::tick() { return ++clock_; }

void BlockPool::set_eviction_listener(EvictionListener listener) {
    auto lock = io_guard();
    on_evict_ = std::move(listener);
}

BlockPool::Entry& BlockPool::hot_entry(const std::string& agent_id) {
    auto it = agents_.find(agent_id);
    if (it == agents_.end()) {
        if (config_.cache_dir.empty() || !cache_paths(config_.cache_dir, agent_id).exists()) {
            throw Error(ErrorCode::NotFound, "unknown agent '" + agent_id + "'");
        }
        Entry e;
        e.cache = make_empty_cache(spec_, agent_id);
        e.cache.state = CacheState::Warm;
        it = agents_.emplace(agent_id, std::move(e)).first;
    }
    if (it->second.cache.state != CacheState::Hot) reload(it->second);
    return it->second;
}

BlockPool::Entry& BlockPool::ensure_entry(const std::string& agent_id) {
    if (agent_id.empty()) throw Error(ErrorCode::InvalidArgument, "agent id must not be empty");
    try {
        return hot_entry(agent_id);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NotFound) throw;
    }
    Entry e;
    e.cache = make_empty_cache(spec_, agent_id);
    return agents_.emplace(agent_id, std::move(e)).first->second;
}

void BlockPool::reload(Entry& e) {
    AgentCache loaded = load_agent(cache_paths(config_.cache_dir, e.cache.agent_id), fingerprint_);
    if (loaded.agent_id != e.cache.agent_id) {
        throw Error(ErrorCode::CorruptFile, "cache file for '" + e.cache.agent_id + "' names agent '" +
                                                loaded.agent_id + "'");
    }
    loaded.last_touched = e.cache.last_touched;
    e.cache = std::move(loaded);
    e.cache.state = CacheState::Hot;
    e.dirty = false;
    resident_ += e.cache.resident_bytes();
    ++counters_.reloads;
}

void BlockPool::evict_entry(Entry& e) {
    if (e.dirty || !cache_paths(config_.cache_dir, e.cache.agent_id).exists()) {
        try {
            save_agent(e.cache, spec_, config_.cache_dir);
        } catch (const Error& err) {
            ++counters_.eviction_failures;
            throw Error(ErrorCode::EvictionFailed, "cannot persist '" + e.cache.agent_id + "': " + err.message());
        }
        e.dirty = false;
    }
    const uint64_t bytes = e.cache.resident_bytes();
    e.cache.blocks.assign(spec_.num_layers(), {});
    e.cache.state = CacheState::Warm;
    resident_ -= bytes;
    ++counters_.evictions;
    if (on_evict_) on_evict_(e.cache.agent_id, bytes);
}

void BlockPool::enforce_budget() {
    std::set<std::string> failed;
    counters_.over_budget = false;
    while (resident_ > config_.budget_bytes) {
        Entry* victim = nullptr;
        for (auto& [id, e] : agents_) {
            if (e.cache.state != CacheState::Hot || failed.count(id) != 0) continue;
            if (victim == nullptr || e.cache.last_touched < victim->cache.last_touched) victim = &e;
        }
        if (victim == nullptr) {
            counters_.over_budget = true;
            return;
        }
        try {
            evict_entry(*victim);
        } catch (const Error&) {
            failed.insert(victim->cache.agent_id);
        }
    }
}

void BlockPool::append_text(AgentCache& c, TokenAppend tokens) {
    const auto base = static_cast<uint32_t>(utf8::length(c.transcript_text));
    const auto text_len = static_cast<uint32_t>(utf8::length(tokens.text));
    uint32_t prev = c.char_offsets.empty() ? 0 : c.char_offsets.back();
    for (size_t i = 0; i < tokens.offsets.size(); ++i) {
        const uint32_t abs = base + tokens.offsets[i];
        if (tokens.offsets[i] > text_len || abs < prev || (c.char_offsets.empty() && i == 0 && abs != 0)) {
            throw Error(ErrorCode::InvalidArgument, "token offsets must be non-decreasing, start at 0 and stay "
                                                    "within the text");
        }
        prev = abs;
    }
    c.transcript_text.append(tokens.text);
    c.token_ids.insert(c.token_ids.end(), tokens.ids.begin(), tokens.ids.end());
    for (uint32_t off : tokens.offsets) c.char_offsets.push_back(base + off);
}

size_t BlockPool::append_tokens(const std::string& agent_id, std::span<const LayerKV> per_layer_kv,
                                TokenAppend tokens) {
    if (per_layer_kv.size() != spec_.num_layers()) {
        throw Error(ErrorCode::ShapeError, "expected KV for " + std::to_string(spec_.num_layers()) + " layers, got " +
                                               std::to_string(per_layer_kv.size()));
    }
    std::vector<std::pair<QuantizedTensor, QuantizedTensor>> quantized;
    quantized.reserve(per_layer_kv.size());
    for (const auto& kv : per_layer_kv) {
        quantized.emplace_back(quantize_tensor(kv.k, spec_, KVRole::Key), quantize_tensor(kv.v, spec_, KVRole::Value));
    }
    return append_quantized(agent_id, quantized, tokens);
}

size_t BlockPool::append_quantized(const std::string& agent_id,
                                   std::span<const std::pair<QuantizedTensor, QuantizedTensor>> per_layer,
                                   TokenAppend tokens) {
    auto lock = io_guard();
    if (per_layer.size() != spec_.num_layers()) {
        throw Error(ErrorCode::ShapeError, "expected KV for " + std::to_string(spec_.num_layers()) + " layers");
    }
    const size_t t_new = tokens.ids.size();
    if (tokens.offsets.size() != t_new) throw Error(ErrorCode::ShapeError, "token ids and offsets differ in length");
    for (const auto& [k, v] : per_layer) {
        if (k.tokens != t_new || v.tokens != t_new || k.heads != spec_.num_kv_heads() ||
            v.heads != spec_.num_kv_heads() || k.dim != spec_.k_head_dim() || v.dim != spec_.v_head_dim() ||
            k.group_size != spec_.group_size() || v.group_size != spec_.group_size()) {
            throw Error(ErrorCode::ShapeError, "KV shape does not match spec or token count " + std::to_string(t_new));
        }
    }

    Entry& e = ensure_entry(agent_id);
    AgentCache& c = e.cache;
    append_text(c, tokens);
    const uint64_t before = c.resident_bytes();
    for (uint32_t l = 0; l < spec_.num_layers(); ++l) {
        append_to_layer(c.blocks[l], l, per_layer[l].first, per_layer[l].second, spec_.block_tokens());
    }
    resident_ += c.resident_bytes() - before;
    c.state = CacheState::Hot;
    c.last_touched = tick();
    e.dirty = true;
    const size_t total = c.token_count();
    enforce_budget();
    return total;
}

const AgentCache& BlockPool::get_cache(const std::string& agent_id) {
    auto lock = io_guard();
    Entry& e = hot_entry(agent_id);
    e.cache.last_touched = tick();
    enforce_budget();
    if (e.cache.state != CacheState::Hot) {
        // evicted by its own reload: the budget cannot hold this agent
        reload(e);
        counters_.over_budget = resident_ > config_.budget_bytes;
    }
    return e.cache;
}

std::optional<std::string> BlockPool::evict_lru() {
    auto lock = io_guard();
    tick();
    Entry* victim = nullptr;
    for (auto& [id, e] : agents_) {
        if (e.cache.state != CacheState::Hot) continue;
        if (victim == nullptr || e.cache.last_touched < victim->cache.last_touched) victim = &e;
    }
    if (victim == nullptr) return std::nullopt;
    evict_entry(*victim);
    return victim->cache.agent_id;
}

void BlockPool::drop_agent(const std::string& agent_id, bool delete_disk) {
    auto lock = io_guard();
    tick();
    const auto pair = config_.cache_dir.empty() ? CacheFilePair{} : cache_paths(config_.cache_dir, agent_id);
    auto it = agents_.find(agent_id);
    if (it == agents_.end()) {
        if (config_.cache_dir.empty() || !pair.exists()) {
            throw Error(ErrorCode::NotFound, "unknown agent '" + agent_id + "'");
        }
    } else {
        Entry& e = it->second;
        if (!delete_disk && e.cache.state == CacheState::Hot && (e.dirty || !pair.exists())) {
            save_agent(e.cache, spec_, config_.cache_dir);
        }
        if (e.cache.state == CacheState::Hot) resident_ -= e.cache.resident_bytes();
        agents_.erase(it);
    }
    if (delete_disk && !config_.cache_dir.empty()) remove_pair(pair);
    enforce_budget();
}

CacheFilePair BlockPool::save(const std::string& agent_id) {
    auto lock = io_guard();
    tick();
    if (config_.cache_dir.empty()) throw Error(ErrorCode::PersistError, "pool has no cache directory");
    const auto pair = cache_paths(config_.cache_dir, agent_id);
    auto it = agents_.find(agent_id);
    if (it == agents_.end()) {
        // dropped agents were persisted on the way out
        if (pair.exists()) return pair;
        throw Error(ErrorCode::NotFound, "unknown agent '" + agent_id + "'");
    }
    Entry& e = it->second;
    if (e.cache.state == CacheState::Hot && (e.dirty || !pair.exists())) {
        save_agent(e.cache, spec_, config_.cache_dir);
        e.dirty = false;
    }
    return pair;
}

const AgentCache& BlockPool::restore(const std::string& agent_id) {
    auto lock = io_guard();
    AgentCache loaded = load_agent(cache_paths(config_.cache_dir, agent_id), fingerprint_);
    if (loaded.agent_id != agent_id) {
        throw Error(ErrorCode::CorruptFile, "cache file for '" + agent_id + "' names agent '" + loaded.agent_id + "'");
    }
    auto it = agents_.find(agent_id);
    if (it != agents_.end()) {
        if (it->second.cache.state == CacheState::Hot) resident_ -= it->second.cache.resident_bytes();
        agents_.erase(it);
    }
    Entry e;
    e.cache = std::move(loaded);
    e.cache.state = CacheState::Hot;
    e.cache.last_touched = tick();
    e.dirty = false;
    resident_ += e.cache.resident_bytes();
    ++counters_.reloads;
    Entry& stored = agents_.emplace(agent_id, std::move(e)).first->second;
    enforce_budget();
    if (stored.cache.state != CacheState::Hot) {
        reload(stored);
        counters_.over_budget = resident_ > config_.budget_bytes;
    }
    return stored.cache;
}

void BlockPool::truncate(const std::string& agent_id, size_t tokens) {
    auto lock = io_guard();
    Entry& e = hot_entry(agent_id);
    AgentCache& c = e.cache;
    if (tokens > c.token_count()) throw Error(ErrorCode::InvalidArgument, "cannot truncate beyond the token count");
    if (tokens < c.token_count()) {
        const uint64_t before = c.resident_bytes();
        truncate_blocks(c.blocks, static_cast<uint32_t>(tokens), spec_.block_tokens());
        const size_t keep_chars = c.char_offsets[tokens];
        c.transcript_text.resize(utf8::byte_offset(c.transcript_text, keep_chars));
        c.token_ids.resize(tokens);
        c.char_offsets.resize(tokens);
        resident_ -= before - c.resident_bytes();
        e.dirty = true;
    }
    c.last_touched = tick();
}

void BlockPool::reset(const std::string& agent_id, bool delete_disk) {
    auto lock = io_guard();
    if (agent_id.empty()) throw Error(ErrorCode::InvalidArgument, "agent id must not be empty");
    auto it = agents_.find(agent_id);
    if (it != agents_.end() && it->second.cache.state == CacheState::Hot) {
        resident_ -= it->second.cache.resident_bytes();
    }
    Entry e;
    e.cache = make_empty_cache(spec_, agent_id);
    e.cache.last_touched = tick();
    agents_.insert_or_assign(agent_id, std::move(e));
    if (delete_disk && !config_.cache_dir.empty()) remove_pair(cache_paths(config_.cache_dir, agent_id));
}

void BlockPool::insert(AgentCache cache) {
    auto lock = io_guard();
    if (cache.spec_fingerprint != fingerprint_) {
        throw Error(ErrorCode::SpecMismatch, "agent '" + cache.agent_id + "' was built for a different spec");
    }
    cache.validate(spec_);
    auto it = agents_.find(cache.agent_id);
    if (it != agents_.end() && it->second.cache.state == CacheState::Hot) {
        resident_ -= it->second.cache.resident_bytes();
    }
    Entry e;
    e.cache = std::move(cache);
    e.cache.state = CacheState::Hot;
    e.cache.last_touched = tick();
    resident_ += e.cache.resident_bytes();
    const std::string id = e.cache.agent_id;
    agents_.insert_or_assign(id, std::move(e));
    enforce_budget();
}

bool BlockPool::contains(const std::string& agent_id) const {
    auto lock = io_guard();
    return agents_.count(agent_id) != 0;
}

bool BlockPool::on_disk(const std::string& agent_id) const {
    return !config_.cache_dir.empty() && cache_paths(config_.cache_dir, agent_id).exists();
}

std::optional<CacheState> BlockPool::state(const std::string& agent_id) const {
    auto lock = io_guard();
    auto it = agents_.find(agent_id);
    if (it != agents_.end()) return it->second.cache.state;
    if (on_disk(agent_id)) return CacheState::Warm;
    return std::nullopt;
}

std::vector<std::string> BlockPool::agent_ids() const {
    auto lock = io_guard();
    std::vector<std::string> ids;
    for (const auto& [id, e] : agents_) ids.push_back(id);
    return ids;
}

std::vector<std::string> BlockPool::hot_agents() const {
    auto lock = io_guard();
    std::vector<std::string> ids;
    for (const auto& [id, e] : agents_) {
        if (e.cache.state == CacheState::Hot) ids.push_back(id);
    }
    return ids;
}

uint64_t BlockPool::clock() const {
    auto lock = io_guard();
    return clock_;
}

PoolStats BlockPool::stats() const {
    auto lock = io_guard();
    PoolStats s = counters_;
    s.resident_bytes = resident_;
    s.budget_bytes = config_.budget_bytes;
    s.agents_hot = s.agents_warm = 0;
    for (const auto& [id, e] : agents_) {
        (e.cache.state == CacheState::Hot ? s.agents_hot : s.agents_warm) += 1;
    }
    return s;
}

uint64_t BlockPool::checksum(const std::string& agent_id) const {
    auto lock = io_guard();
    auto it = agents_.find(agent_id);
    if (it != agents_.end() && it->second.cache.state == CacheState::Hot) return it->second.cache.checksum();
    if (on_disk(agent_id)) return load_agent(cache_paths(config_.cache_dir, agent_id), fingerprint_).checksum();
    return 0;
}

}  // namespace agentcache
