// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/engine.hpp"

#include "agentcache/error.hpp"
#include "agentcache/hash.hpp"
#include "agentcache/utf8.hpp"

namespace agentcache {

namespace {

bool is_space(unsigned char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

size_t code_point_bytes(std::string_view s, size_t i) noexcept {
    size_t j = i + 1;
    while (j < s.size() && utf8::is_continuation(static_cast<unsigned char>(s[j]))) ++j;
    return j - i;
}

uint64_t agent_seed(std::string_view agent_id) noexcept { return fnv1a64(agent_id); }

}  // namespace

class SyntheticEngine::Guard {
public:
    explicit Guard(SyntheticEngine& e) : e_(e) {
        if (e_.in_flight_.fetch_add(1) != 0) {
            std::lock_guard lock(e_.mutex_);
            ++e_.counters_.reentrancy_violations;
        }
    }
    ~Guard() { e_.in_flight_.fetch_sub(1); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

private:
    SyntheticEngine& e_;
};

SyntheticEngine::SyntheticEngine(ModelCacheSpec spec) : spec_(std::move(spec)) {}

int32_t SyntheticEngine::token_id(std::string_view piece) noexcept {
    return static_cast<int32_t>(fnv1a64(piece) & 0x7fffffffu);
}

std::string SyntheticEngine::decode_text(std::string_view agent_id, uint64_t position) {
    return " t" + std::to_string(hash_combine(agent_seed(agent_id), position) % 100000);
}

float SyntheticEngine::kv_value(std::string_view agent_id, uint32_t layer, uint64_t position, int32_t token,
                                bool is_value, uint32_t head, uint32_t d) noexcept {
    uint64_t h = hash_combine(agent_seed(agent_id), layer);
    h = hash_combine(h, position);
    h = hash_combine(h, static_cast<uint32_t>(token));
    h = hash_combine(h, (static_cast<uint64_t>(is_value) << 48) | (static_cast<uint64_t>(head) << 24) | d);
    return static_cast<float>(static_cast<double>(h >> 40) / 8388608.0 - 1.0);  // 2^23
}

Tokenized SyntheticEngine::tokenize(std::string_view text) {
    Guard guard(*this);
    Tokenized out;
    size_t i = 0;
    uint32_t cp = 0;
    while (i < text.size()) {
        const size_t start = i;
        out.offsets.push_back(cp);
        while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) {
            ++i;
            ++cp;
        }
        size_t word = 0;
        while (i < text.size() && word < kMaxTokenChars && !is_space(static_cast<unsigned char>(text[i]))) {
            i += code_point_bytes(text, i);
            ++cp;
            ++word;
        }
        out.ids.push_back(token_id(text.substr(start, i - start)));
    }
    return out;
}

void SyntheticEngine::check_failure(const std::string& agent_id) const {
    std::lock_guard lock(mutex_);
    if (failing_.count(agent_id) != 0) {
        throw Error(ErrorCode::EngineFailure, "injected failure for agent '" + agent_id + "'");
    }
}

std::vector<LayerKV> SyntheticEngine::prefill_chunk(const std::string& agent_id, std::span<const int32_t> ids,
                                                    const AgentCache& existing) {
    Guard guard(*this);
    check_failure(agent_id);
    const uint64_t start = existing.token_count();
    const uint32_t heads = spec_.num_kv_heads();
    std::vector<LayerKV> out;
    out.reserve(spec_.num_layers());
    for (uint32_t l = 0; l < spec_.num_layers(); ++l) {
        LayerKV kv{Tensor({heads, ids.size(), spec_.k_head_dim()}), Tensor({heads, ids.size(), spec_.v_head_dim()})};
        for (uint32_t h = 0; h < heads; ++h) {
            for (size_t t = 0; t < ids.size(); ++t) {
                for (uint32_t d = 0; d < spec_.k_head_dim(); ++d) {
                    kv.k.at(h, t, d) = kv_value(agent_id, l, start + t, ids[t], false, h, d);
                }
                for (uint32_t d = 0; d < spec_.v_head_dim(); ++d) {
                    kv.v.at(h, t, d) = kv_value(agent_id, l, start + t, ids[t], true, h, d);
                }
            }
        }
        out.push_back(std::move(kv));
    }
    std::lock_guard lock(mutex_);
    counters_.tokens_prefilled += ids.size();
    ++counters_.prefill_calls;
    return out;
}

DecodeOutput SyntheticEngine::decode_step(const BatchCache& batch, std::span<const int32_t> last_tokens) {
    Guard guard(*this);
    if (last_tokens.size() != batch.batch) throw Error(ErrorCode::ShapeError, "need one last token per row");
    for (const auto& id : batch.agent_ids) check_failure(id);
    const uint32_t heads = spec_.num_kv_heads();
    DecodeOutput out;
    for (uint32_t r = 0; r < batch.batch; ++r) {
        out.texts.push_back(decode_text(batch.agent_ids[r], batch.valid_lens[r]));
        out.next_ids.push_back(token_id(out.texts.back()));
    }
    for (uint32_t l = 0; l < spec_.num_layers(); ++l) {
        LayerKV kv{Tensor({batch.batch, heads, 1, spec_.k_head_dim()}),
                   Tensor({batch.batch, heads, 1, spec_.v_head_dim()})};
        for (uint32_t r = 0; r < batch.batch; ++r) {
            const uint64_t pos = batch.valid_lens[r];
            for (uint32_t h = 0; h < heads; ++h) {
                for (uint32_t d = 0; d < spec_.k_head_dim(); ++d) {
                    kv.k.at(r, h, 0, d) = kv_value(batch.agent_ids[r], l, pos, out.next_ids[r], false, h, d);
                }
                for (uint32_t d = 0; d < spec_.v_head_dim(); ++d) {
                    kv.v.at(r, h, 0, d) = kv_value(batch.agent_ids[r], l, pos, out.next_ids[r], true, h, d);
                }
            }
        }
        out.kv.push_back(std::move(kv));
    }
    std::lock_guard lock(mutex_);
    ++counters_.decode_steps;
    counters_.decode_rows += batch.batch;
    return out;
}

EngineCounters SyntheticEngine::counters() const {
    std::lock_guard lock(mutex_);
    return counters_;
}

void SyntheticEngine::inject_failure(const std::string& agent_id) {
    std::lock_guard lock(mutex_);
    failing_.insert(agent_id);
}

void SyntheticEngine::clear_failures() {
    std::lock_guard lock(mutex_);
    failing_.clear();
}

ModelCacheSpec tiny_spec() {
    ModelCacheSpec::Params p;
    p.model_id = "tiny";
    p.num_layers = 4;
    p.num_kv_heads = 2;
    p.num_query_heads = 4;
    p.k_head_dim = 64;
    p.v_head_dim = 64;
    p.layer_kinds = {AttentionKind::sliding_window(64), AttentionKind::sliding_window(64),
                     AttentionKind::sliding_window(64), AttentionKind::global()};
    p.block_tokens = 64;
    p.group_size = 64;
    return ModelCacheSpec(std::move(p));
}

ModelCacheSpec resolve_spec(std::string_view name) {
    if (name == "tiny") return tiny_spec();
    return preset(name);
}

}  // namespace agentcache
