// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for unit and acceptance tests.

#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "agentcache/agent_cache.hpp"
#include "agentcache/model_spec.hpp"
#include "agentcache/quant_codec.hpp"
#include "agentcache/tensor.hpp"

namespace agentcache::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("agentcache-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

inline Tensor random_tensor(std::vector<size_t> shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

/// Transcript of `tokens` tokens, one code point each, with a few multi-byte ones.
inline std::string random_transcript(size_t tokens, std::mt19937_64& rng) {
    static const char* pieces[] = {"a", "b", "c", " ", "\xc3\xa9", "\xe2\x82\xac", "x", "\xf0\x9f\x99\x82"};
    std::string s;
    for (size_t i = 0; i < tokens; ++i) s += pieces[rng() % 8];
    return s;
}

/// A structurally valid cache with random K/V for every layer.
inline AgentCache random_cache(const ModelCacheSpec& spec, const std::string& id, size_t tokens,
                               std::mt19937_64& rng) {
    AgentCache c = make_empty_cache(spec, id);
    for (uint32_t l = 0; l < spec.num_layers(); ++l) {
        if (tokens == 0) break;
        const auto k = quantize_tensor(random_tensor({spec.num_kv_heads(), tokens, spec.k_head_dim()}, rng), spec,
                                       KVRole::Key);
        const auto v = quantize_tensor(random_tensor({spec.num_kv_heads(), tokens, spec.v_head_dim()}, rng), spec,
                                       KVRole::Value);
        append_to_layer(c.blocks[l], l, k, v, spec.block_tokens());
    }
    c.transcript_text = random_transcript(tokens, rng);
    for (size_t i = 0; i < tokens; ++i) {
        c.token_ids.push_back(static_cast<int32_t>(rng() & 0x7fffffff));
        c.char_offsets.push_back(static_cast<uint32_t>(i));
    }
    return c;
}

/// A small spec for fast tests; block 16, group 16 unless overridden.
inline ModelCacheSpec small_spec(uint32_t layers = 2, uint32_t kv_heads = 2, uint32_t q_heads = 4, uint32_t dk = 32,
                                 uint32_t dv = 16, uint32_t block = 16, uint32_t group = 16,
                                 std::vector<AttentionKind> kinds = {}) {
    ModelCacheSpec::Params p;
    p.model_id = "small-test";
    p.num_layers = layers;
    p.num_kv_heads = kv_heads;
    p.num_query_heads = q_heads;
    p.k_head_dim = dk;
    p.v_head_dim = dv;
    if (kinds.empty()) {
        for (uint32_t l = 0; l < layers; ++l) {
            kinds.push_back(l % 2 == 0 ? AttentionKind::sliding_window(8) : AttentionKind::global());
        }
    }
    p.layer_kinds = std::move(kinds);
    p.block_tokens = block;
    p.group_size = group;
    return ModelCacheSpec(std::move(p));
}

}  // namespace agentcache::testing
