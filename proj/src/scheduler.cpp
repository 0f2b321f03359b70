// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/scheduler.hpp"

#include <algorithm>
#include <filesystem>

#include "agentcache/error.hpp"
#include "agentcache/utf8.hpp"

namespace agentcache {

std::string_view to_string(EventKind k) noexcept {
    switch (k) {
        case EventKind::FirstToken: return "FirstToken";
        case EventKind::Token: return "Token";
        case EventKind::Done: return "Done";
        case EventKind::CacheSaved: return "CacheSaved";
        case EventKind::CacheLoaded: return "CacheLoaded";
        case EventKind::Evicted: return "Evicted";
    }
    return "Unknown";
}

nlohmann::json Event::to_json() const {
    nlohmann::json j{{"kind", to_string(kind)}, {"request_id", request_id}, {"agent_id", agent_id},
                     {"text", text},           {"bytes", bytes},            {"tick", tick},
                     {"ok", ok}};
    if (!error.empty()) j["error"] = error;
    if (!detail.is_null()) j["detail"] = detail;
    return j;
}

std::string events_to_jsonl(const std::vector<Event>& events) {
    std::string out;
    for (const auto& e : events) {
        out += e.to_json().dump();
        out += '\n';
    }
    return out;
}

Scheduler::Scheduler(Engine& engine, BlockPool& pool, SchedulerConfig config)
    : engine_(engine), pool_(pool), config_(config) {
    if (config_.chunk_tokens == 0) throw Error(ErrorCode::InvalidArgument, "chunk size must be positive");
    if (config_.max_batch == 0) throw Error(ErrorCode::InvalidArgument, "max batch must be positive");
    if (engine_.spec() != pool_.spec()) throw Error(ErrorCode::SpecMismatch, "engine and pool specs differ");
    pool_.set_eviction_listener([this](const std::string& agent_id, uint64_t bytes) {
        Event e;
        e.kind = EventKind::Evicted;
        e.agent_id = agent_id;
        e.bytes = bytes;
        emit(pool_events_, std::move(e));
    });
}

Scheduler::~Scheduler() { pool_.set_eviction_listener(nullptr); }

void Scheduler::submit(Request r) {
    if (r.max_tokens == 0) throw Error(ErrorCode::InvalidArgument, "max_tokens must be at least 1");
    if (r.agent_id.empty()) throw Error(ErrorCode::InvalidArgument, "agent id must not be empty");
    std::lock_guard lock(submit_mutex_);
    if (!seen_ids_.insert(r.request_id).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate request id '" + r.request_id + "'");
    }
    incoming_.push_back(std::move(r));
}

bool Scheduler::idle() const {
    std::lock_guard lock(submit_mutex_);
    return incoming_.empty() && waiting_.empty() && active_.empty();
}

void Scheduler::emit(std::vector<Event>& events, Event e) {
    e.tick = ++tick_;
    events.push_back(std::move(e));
}

void Scheduler::flush_pool_events(std::vector<Event>& events) {
    // Pool events were ticked when they fired; keep global tick order.
    events.insert(events.end(), pool_events_.begin(), pool_events_.end());
    pool_events_.clear();
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.tick < b.tick; });
}

void Scheduler::admit(std::vector<Event>& events) {
    {
        std::lock_guard lock(submit_mutex_);
        while (!incoming_.empty()) {
            waiting_.push_back(std::move(incoming_.front()));
            incoming_.pop_front();
        }
    }
    std::deque<Request> still_waiting;
    while (!waiting_.empty()) {
        Request r = std::move(waiting_.front());
        waiting_.pop_front();
        if (busy_agents_.count(r.agent_id) != 0) {
            still_waiting.push_back(std::move(r));
            continue;
        }
        busy_agents_.insert(r.agent_id);
        const std::string id = r.request_id;
        Active fresh;
        fresh.req = std::move(r);
        Active& a = active_.emplace(id, std::move(fresh)).first->second;
        start(a, events);
    }
    waiting_ = std::move(still_waiting);
}

void Scheduler::start(Active& a, std::vector<Event>& events) {
    const std::string& agent = a.req.agent_id;
    RequestStats& st = stats_[a.req.request_id];
    st.agent_id = agent;
    MatchResult m;
    m.suffix_text = a.req.prompt;
    try {
        if (!a.req.persistent_cache_prefix) {
            pool_.reset(agent, true);
        } else if (pool_.contains(agent) || pool_.on_disk(agent)) {
            const bool was_hot = pool_.state(agent) == CacheState::Hot;
            const AgentCache& c = pool_.get_cache(agent);
            if (!was_hot) {
                Event e;
                e.kind = EventKind::CacheLoaded;
                e.agent_id = agent;
                e.bytes = c.resident_bytes();
                emit(pool_events_, std::move(e));
            }
            m = agentcache::match(c, a.req.prompt, pool_.spec().block_tokens());
            if (m.verdict == Verdict::Diverge) {
                pool_.reset(agent, true);
            } else if (m.reuse_tokens < c.token_count()) {
                pool_.truncate(agent, m.reuse_tokens);
            }
        } else {
            pool_.reset(agent, false);
        }
        a.pending_text = m.verdict == Verdict::Diverge ? a.req.prompt : m.suffix_text;
        a.pending = engine_.tokenize(a.pending_text);
    } catch (const Error& err) {
        finish(a, events, err.what());
        return;
    }
    st.verdict = m.verdict;
    st.reused_tokens = m.verdict == Verdict::Diverge ? 0 : m.reuse_tokens;
    st.prompt_tokens = st.reused_tokens + a.pending.size();
    counters_.reused_tokens += st.reused_tokens;
    if (a.pending.size() == 0) {
        a.decoding = true;
        decode_rr_.push_back(a.req.request_id);
    } else {
        prefill_rr_.push_back(a.req.request_id);
    }
}

std::vector<Event> Scheduler::step() {
    std::vector<Event> events;
    admit(events);
    const bool has_prefill = !prefill_rr_.empty();
    const bool has_decode = !decode_rr_.empty();
    if (has_prefill || has_decode) {
        ++counters_.steps;
        const bool do_prefill = has_prefill && (!has_decode || !last_was_prefill_);
        if (do_prefill) {
            prefill_one(events);
        } else {
            decode_one(events);
        }
        last_was_prefill_ = do_prefill;
    }
    flush_pool_events(events);
    return events;
}

std::vector<Event> Scheduler::run_until_idle() {
    std::vector<Event> trace;
    while (!idle()) {
        auto events = step();
        trace.insert(trace.end(), std::make_move_iterator(events.begin()), std::make_move_iterator(events.end()));
    }
    return trace;
}

void Scheduler::prefill_one(std::vector<Event>& events) {
    const std::string id = prefill_rr_.front();
    prefill_rr_.pop_front();
    Active& a = active_.at(id);
    const size_t n = std::min<size_t>(config_.chunk_tokens, a.pending.size() - a.next);
    const std::span<const int32_t> ids(a.pending.ids.data() + a.next, n);

    const uint32_t cp_begin = a.pending.offsets[a.next];
    const auto cp_end = a.next + n < a.pending.size() ? a.pending.offsets[a.next + n]
                                                      : static_cast<uint32_t>(utf8::length(a.pending_text));
    const size_t b0 = utf8::byte_offset(a.pending_text, cp_begin);
    const size_t b1 = utf8::byte_offset(a.pending_text, cp_end);
    std::vector<uint32_t> rel(n);
    for (size_t i = 0; i < n; ++i) rel[i] = a.pending.offsets[a.next + i] - cp_begin;

    try {
        const uint64_t resident_before = pool_.stats().resident_bytes;
        auto kv = engine_.prefill_chunk(a.req.agent_id, ids, pool_.get_cache(a.req.agent_id));
        uint64_t staging = 0;
        for (const auto& layer : kv) staging += (layer.k.size() + layer.v.size()) * sizeof(float);
        counters_.max_chunk_staging_bytes = std::max(counters_.max_chunk_staging_bytes, staging);
        pool_.append_tokens(a.req.agent_id, kv,
                            TokenAppend{ids, rel, std::string_view(a.pending_text).substr(b0, b1 - b0)});
        const uint64_t resident_after = pool_.stats().resident_bytes;
        counters_.peak_prefill_bytes =
            std::max({counters_.peak_prefill_bytes, resident_before + staging, resident_after});
    } catch (const Error& err) {
        finish(a, events, err.what());
        return;
    }
    a.next += n;
    ++counters_.prefill_chunks;
    counters_.prefill_tokens += n;
    stats_[id].prefilled_tokens += n;
    work_log_.push_back(WorkItem{WorkItem::Kind::Prefill, counters_.steps, {id}, {a.req.agent_id}, n});
    if (a.next == a.pending.size()) {
        a.decoding = true;
        decode_rr_.push_back(id);
    } else {
        prefill_rr_.push_back(id);
    }
}

void Scheduler::decode_one(std::vector<Event>& events) {
    std::vector<std::string> rows;
    while (!decode_rr_.empty() && rows.size() < config_.max_batch) {
        rows.push_back(decode_rr_.front());
        decode_rr_.pop_front();
    }

    const ModelCacheSpec& spec = pool_.spec();
    DecodeOutput out;
    BatchCache batch;
    try {
        std::vector<AgentCache> caches;
        caches.reserve(rows.size());
        std::vector<int32_t> last;
        for (const auto& id : rows) {
            const Active& a = active_.at(id);
            caches.push_back(pool_.get_cache(a.req.agent_id));
            last.push_back(a.last_token);
        }
        std::vector<const AgentCache*> ptrs;
        for (const auto& c : caches) ptrs.push_back(&c);
        batch = merge(ptrs, spec, config_.max_batch);
        out = engine_.decode_step(batch, last);
    } catch (const Error& err) {
        if (rows.size() == 1) {
            fail_rows(rows, err.what(), events);
            return;
        }
        // Retry rows one by one so a single failing agent does not take the batch down.
        for (const auto& id : rows) decode_rr_.push_front(id);
        const size_t saved = config_.max_batch;
        config_.max_batch = 1;
        for (size_t i = 0; i < rows.size(); ++i) decode_one(events);
        config_.max_batch = static_cast<uint32_t>(saved);
        return;
    }

    const BatchCache updated = update_and_fetch(std::move(batch), out.kv, spec);
    const std::vector<LayerBlocks> split = extract(updated, spec);
    ++counters_.decode_steps;
    counters_.decode_rows += rows.size();
    WorkItem item{WorkItem::Kind::Decode, counters_.steps, rows, {}, rows.size()};

    for (size_t r = 0; r < rows.size(); ++r) {
        Active& a = active_.at(rows[r]);
        item.agent_ids.push_back(a.req.agent_id);
        std::vector<std::pair<QuantizedTensor, QuantizedTensor>> last_token;
        for (uint32_t l = 0; l < spec.num_layers(); ++l) {
            const KVBlock& tail = split[r][l].back();
            last_token.emplace_back(slice_tokens(tail.k, tail.token_count - 1, tail.token_count),
                                    slice_tokens(tail.v, tail.token_count - 1, tail.token_count));
        }
        const int32_t id = out.next_ids[r];
        const uint32_t zero = 0;
        try {
            pool_.append_quantized(a.req.agent_id, last_token,
                                   TokenAppend{std::span(&id, 1), std::span(&zero, 1), out.texts[r]});
        } catch (const Error& err) {
            finish(a, events, err.what());
            continue;
        }
        ++a.generated;
        a.last_token = id;
        a.output += out.texts[r];
        stats_[rows[r]].generated = a.generated;
        Event e;
        e.kind = a.generated == 1 ? EventKind::FirstToken : EventKind::Token;
        e.request_id = rows[r];
        e.agent_id = a.req.agent_id;
        e.text = out.texts[r];
        emit(events, std::move(e));
        if (a.generated == a.req.max_tokens) {
            finish(a, events, "");
        } else {
            decode_rr_.push_back(rows[r]);
        }
    }
    work_log_.push_back(std::move(item));
}

void Scheduler::fail_rows(const std::vector<std::string>& rows, const std::string& error,
                          std::vector<Event>& events) {
    for (const auto& id : rows) finish(active_.at(id), events, error);
}

void Scheduler::finish(Active& a, std::vector<Event>& events, const std::string& error) {
    const std::string id = a.req.request_id;
    RequestStats& st = stats_[id];
    st.agent_id = a.req.agent_id;
    st.ok = error.empty();
    Event e;
    e.kind = EventKind::Done;
    e.request_id = id;
    e.agent_id = a.req.agent_id;
    e.text = a.output;
    e.ok = error.empty();
    e.error = error;
    e.detail = {{"verdict", to_string(st.verdict)},          {"prompt_tokens", st.prompt_tokens},
                {"reused_tokens", st.reused_tokens},         {"prefilled_tokens", st.prefilled_tokens},
                {"generated", st.generated}};
    emit(events, std::move(e));
    busy_agents_.erase(a.req.agent_id);
    std::erase(prefill_rr_, id);
    std::erase(decode_rr_, id);
    active_.erase(id);
}

std::vector<Event> Scheduler::save_all() {
    std::vector<Event> events;
    for (const auto& agent : pool_.hot_agents()) {
        Event e;
        e.kind = EventKind::CacheSaved;
        e.agent_id = agent;
        try {
            const CacheFilePair pair = pool_.save(agent);
            e.bytes = std::filesystem::file_size(pair.tensor_path) + std::filesystem::file_size(pair.sidecar_path);
        } catch (const Error& err) {
            e.ok = false;
            e.error = err.what();
        } catch (const std::filesystem::filesystem_error& err) {
            e.ok = false;
            e.error = err.what();
        }
        emit(events, std::move(e));
    }
    flush_pool_events(events);
    return events;
}

std::vector<Event> Scheduler::restore(const std::vector<std::string>& agent_ids) {
    std::vector<Event> events;
    for (const auto& agent : agent_ids) {
        Event e;
        e.kind = EventKind::CacheLoaded;
        e.agent_id = agent;
        try {
            if (busy_agents_.count(agent) != 0) {
                throw Error(ErrorCode::InvalidArgument, "agent '" + agent + "' has a request in flight");
            }
            e.bytes = pool_.restore(agent).resident_bytes();
        } catch (const Error& err) {
            e.ok = false;
            e.error = err.what();
        }
        emit(events, std::move(e));
    }
    flush_pool_events(events);
    return events;
}

void Scheduler::drop(const std::string& agent_id, bool delete_disk) {
    bool queued = busy_agents_.count(agent_id) != 0;
    {
        std::lock_guard lock(submit_mutex_);
        for (const auto& r : incoming_) queued |= r.agent_id == agent_id;
        for (const auto& r : waiting_) queued |= r.agent_id == agent_id;
    }
    if (queued) throw Error(ErrorCode::InvalidArgument, "agent '" + agent_id + "' has pending requests");
    pool_.drop_agent(agent_id, delete_disk);
}

MatchResult Scheduler::match(const std::string& agent_id, std::string_view prompt) {
    if (!pool_.contains(agent_id) && !pool_.on_disk(agent_id)) {
        MatchResult m;
        m.suffix_text = std::string(prompt);
        return m;
    }
    return agentcache::match(pool_.get_cache(agent_id), prompt, pool_.spec().block_tokens());
}

}  // namespace agentcache
