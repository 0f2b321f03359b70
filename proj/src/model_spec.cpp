// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/model_spec.hpp"

#include <charconv>
#include <cstdio>

#include "agentcache/error.hpp"
#include "agentcache/hash.hpp"

namespace agentcache {

using nlohmann::json;

AttentionKind AttentionKind::sliding_window(uint32_t window_tokens) {
    if (window_tokens == 0) {
        throw Error(ErrorCode::InvalidArgument, "sliding window must be >= 1 token");
    }
    AttentionKind k;
    k.window_ = window_tokens;
    return k;
}

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw Error(ErrorCode::InvalidArgument, "invalid ModelCacheSpec: " + what);
}

}  // namespace

ModelCacheSpec::ModelCacheSpec(Params params) : p_(std::move(params)) {
    require(p_.num_layers > 0, "num_layers must be positive");
    require(p_.num_kv_heads > 0, "num_kv_heads must be positive");
    require(p_.num_query_heads > 0 && p_.num_query_heads % p_.num_kv_heads == 0,
            "num_query_heads must be a positive multiple of num_kv_heads");
    require(p_.k_head_dim > 0 && p_.k_head_dim % 8 == 0, "k_head_dim must be a positive multiple of 8");
    require(p_.v_head_dim > 0 && p_.v_head_dim % 8 == 0, "v_head_dim must be a positive multiple of 8");
    require(p_.group_size > 0, "group_size must be positive");
    require(p_.k_head_dim % p_.group_size == 0 && p_.v_head_dim % p_.group_size == 0,
            "head dims must be multiples of group_size");
    require(p_.block_tokens > 0 && p_.block_tokens % p_.group_size == 0,
            "block_tokens must be a positive multiple of group_size");
    require(p_.fp_bytes_per_element > 0, "fp_bytes_per_element must be positive");
    require(p_.layer_kinds.size() == p_.num_layers, "layer_kinds must have num_layers entries");
}

json ModelCacheSpec::to_json() const {
    json kinds = json::array();
    for (const auto& k : p_.layer_kinds) {
        // 0 encodes global attention
        kinds.push_back(k.window());
    }
    // nlohmann::json objects are std::map backed, so keys serialize sorted.
    return json{
        {"block_tokens", p_.block_tokens},
        {"fp_bytes_per_element", p_.fp_bytes_per_element},
        {"group_size", p_.group_size},
        {"k_head_dim", p_.k_head_dim},
        {"layer_windows", std::move(kinds)},
        {"model_id", p_.model_id},
        {"num_kv_heads", p_.num_kv_heads},
        {"num_layers", p_.num_layers},
        {"num_query_heads", p_.num_query_heads},
        {"v_head_dim", p_.v_head_dim},
    };
}

ModelCacheSpec ModelCacheSpec::from_json(const json& j) {
    try {
        Params p;
        p.model_id = j.at("model_id").get<std::string>();
        p.num_layers = j.at("num_layers").get<uint32_t>();
        p.num_kv_heads = j.at("num_kv_heads").get<uint32_t>();
        p.num_query_heads = j.at("num_query_heads").get<uint32_t>();
        p.k_head_dim = j.at("k_head_dim").get<uint32_t>();
        p.v_head_dim = j.at("v_head_dim").get<uint32_t>();
        p.block_tokens = j.at("block_tokens").get<uint32_t>();
        p.group_size = j.at("group_size").get<uint32_t>();
        p.fp_bytes_per_element = j.at("fp_bytes_per_element").get<uint32_t>();
        for (const auto& w : j.at("layer_windows")) {
            const auto window = w.get<uint32_t>();
            p.layer_kinds.push_back(window == 0 ? AttentionKind::global() : AttentionKind::sliding_window(window));
        }
        return ModelCacheSpec(std::move(p));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed spec JSON: ") + e.what());
    }
}

bool ModelCacheSpec::operator==(const ModelCacheSpec& o) const {
    return p_.model_id == o.p_.model_id && p_.num_layers == o.p_.num_layers &&
           p_.num_kv_heads == o.p_.num_kv_heads && p_.num_query_heads == o.p_.num_query_heads &&
           p_.k_head_dim == o.p_.k_head_dim && p_.v_head_dim == o.p_.v_head_dim &&
           p_.layer_kinds == o.p_.layer_kinds && p_.block_tokens == o.p_.block_tokens &&
           p_.group_size == o.p_.group_size && p_.fp_bytes_per_element == o.p_.fp_bytes_per_element;
}

uint64_t spec_fingerprint(const ModelCacheSpec& spec) {
    return fnv1a64(spec.to_json().dump());
}

ModelCacheSpec preset(std::string_view name) {
    ModelCacheSpec::Params p;
    p.model_id = std::string(name);
    if (name == "gemma3-12b") {
        p.num_layers = 48;
        p.num_kv_heads = 8;
        p.num_query_heads = 16;
        p.k_head_dim = p.v_head_dim = 256;
        // 5 local : 1 global interleave
        for (uint32_t l = 0; l < p.num_layers; ++l) {
            p.layer_kinds.push_back(l % 6 == 5 ? AttentionKind::global() : AttentionKind::sliding_window(1024));
        }
    } else if (name == "deepseek-v2-lite-16b") {
        p.num_layers = 27;
        p.num_kv_heads = 16;
        p.num_query_heads = 16;
        p.k_head_dim = 192;
        p.v_head_dim = 128;
        p.layer_kinds.assign(p.num_layers, AttentionKind::global());
    } else if (name == "llama31-8b") {
        p.num_layers = 32;
        p.num_kv_heads = 8;
        p.num_query_heads = 32;
        p.k_head_dim = p.v_head_dim = 128;
        p.layer_kinds.assign(p.num_layers, AttentionKind::global());
    } else {
        throw Error(ErrorCode::NotFound, "unknown model preset '" + std::string(name) + "'");
    }
    return ModelCacheSpec(std::move(p));
}

std::vector<std::string> preset_names() {
    return {"gemma3-12b", "deepseek-v2-lite-16b", "llama31-8b"};
}

std::string fingerprint_hex(uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

uint64_t parse_fingerprint_hex(std::string_view hex) {
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), v, 16);
    if (ec != std::errc{} || ptr != hex.data() + hex.size() || hex.size() != 16) {
        throw Error(ErrorCode::InvalidArgument, "bad fingerprint '" + std::string(hex) + "'");
    }
    return v;
}

}  // namespace agentcache
