// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentcache/block_pool.hpp"
#include "agentcache/engine.hpp"
#include "agentcache/prefix_matcher.hpp"

namespace agentcache {

inline constexpr uint32_t kDefaultChunkTokens = 512;

struct Request {
    std::string request_id;
    std::string agent_id;
    std::string prompt;
    uint32_t max_tokens = 1;
    /// false: the agent's cache is cleared (memory and disk) before prefill.
    bool persistent_cache_prefix = true;
};

enum class EventKind { FirstToken, Token, Done, CacheSaved, CacheLoaded, Evicted };

std::string_view to_string(EventKind k) noexcept;

struct Event {
    EventKind kind = EventKind::Token;
    std::string request_id;  // empty for pool events
    std::string agent_id;
    std::string text;        // token text, or generated text on Done
    uint64_t bytes = 0;      // CacheSaved/CacheLoaded/Evicted
    uint64_t tick = 0;
    bool ok = true;
    std::string error;
    /// Done only: reuse accounting for the request.
    nlohmann::json detail;

    nlohmann::json to_json() const;
};

struct SchedulerConfig {
    uint32_t chunk_tokens = kDefaultChunkTokens;
    uint32_t max_batch = kDefaultMaxBatch;
};

/// One unit of executed work, recorded for fairness/conservation checks.
struct WorkItem {
    enum class Kind { Prefill, Decode } kind;
    uint64_t step = 0;
    std::vector<std::string> request_ids;  // one for prefill, the batch rows for decode
    std::vector<std::string> agent_ids;
    uint64_t tokens = 0;                   // prefill chunk length, or batch rows
};

struct RequestStats {
    std::string agent_id;
    Verdict verdict = Verdict::Diverge;
    uint64_t prompt_tokens = 0;   // tokens covering the prompt after the request
    uint64_t reused_tokens = 0;
    uint64_t prefilled_tokens = 0;
    uint64_t generated = 0;
    bool ok = true;
};

struct SchedulerCounters {
    uint64_t steps = 0;
    uint64_t prefill_chunks = 0;
    uint64_t prefill_tokens = 0;
    uint64_t reused_tokens = 0;
    uint64_t decode_steps = 0;
    uint64_t decode_rows = 0;
    /// Peak of pool resident bytes plus the FP32 staging of the chunk in flight.
    uint64_t peak_prefill_bytes = 0;
    uint64_t max_chunk_staging_bytes = 0;
};

/// Single-lane cooperative scheduler. submit() may be called from any
/// thread; every other member must be called from the owning lane.
class Scheduler {
public:
    Scheduler(Engine& engine, BlockPool& pool, SchedulerConfig config = {});
    ~Scheduler();
    Scheduler(const Scheduler&) = delete;
    Scheduler& operator=(const Scheduler&) = delete;

    /// Throws InvalidArgument for a duplicate request id or max_tokens == 0.
    void submit(Request r);

    /// Admits queued requests, then runs one prefill chunk or one batched
    /// decode step.
    std::vector<Event> step();

    std::vector<Event> run_until_idle();

    bool idle() const;

    std::vector<Event> save_all();
    std::vector<Event> restore(const std::vector<std::string>& agent_ids);

    /// Removes an agent from the pool. Throws InvalidArgument while a
    /// request for it is queued or running.
    void drop(const std::string& agent_id, bool delete_disk);

    /// Prefix match of a prompt against an agent's current cache, loading
    /// it from disk if needed. Unknown agents yield DIVERGE.
    MatchResult match(const std::string& agent_id, std::string_view prompt);

    const SchedulerConfig& config() const noexcept { return config_; }
    const SchedulerCounters& counters() const noexcept { return counters_; }
    const std::vector<WorkItem>& work_log() const noexcept { return work_log_; }
    const std::map<std::string, RequestStats>& request_stats() const noexcept { return stats_; }
    Engine& engine() noexcept { return engine_; }
    BlockPool& pool() noexcept { return pool_; }

private:
    struct Active {
        Request req;
        Tokenized pending;          // tokens still to prefill
        std::string pending_text;   // text covered by `pending`
        size_t next = 0;            // next pending token to prefill
        uint32_t generated = 0;
        int32_t last_token = 0;
        std::string output;
        bool decoding = false;
    };

    void admit(std::vector<Event>& events);
    void start(Active& a, std::vector<Event>& events);
    void prefill_one(std::vector<Event>& events);
    void decode_one(std::vector<Event>& events);
    void finish(Active& a, std::vector<Event>& events, const std::string& error);
    void fail_rows(const std::vector<std::string>& rows, const std::string& error, std::vector<Event>& events);
    void emit(std::vector<Event>& events, Event e);
    void flush_pool_events(std::vector<Event>& events);

    Engine& engine_;
    BlockPool& pool_;
    SchedulerConfig config_;

    mutable std::mutex submit_mutex_;
    std::deque<Request> incoming_;
    std::set<std::string> seen_ids_;

    std::deque<Request> waiting_;              // agent already busy
    std::map<std::string, Active> active_;     // by request id
    std::set<std::string> busy_agents_;
    std::deque<std::string> prefill_rr_;       // request ids
    std::deque<std::string> decode_rr_;        // request ids
    bool last_was_prefill_ = false;

    std::vector<Event> pool_events_;
    uint64_t tick_ = 0;
    SchedulerCounters counters_;
    std::vector<WorkItem> work_log_;
    std::map<std::string, RequestStats> stats_;
};

std::string events_to_jsonl(const std::vector<Event>& events);

}  // namespace agentcache
