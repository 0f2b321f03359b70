// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace agentcache {

/// Per-layer attention pattern: global causal, or causal restricted to the
/// most recent `window()` key positions.
class AttentionKind {
public:
    static AttentionKind global() noexcept { return AttentionKind{}; }
    static AttentionKind sliding_window(uint32_t window_tokens);

    bool is_global() const noexcept { return window_ == 0; }
    uint32_t window() const noexcept { return window_; }

    bool operator==(const AttentionKind&) const = default;

private:
    uint32_t window_ = 0;
};

/// Architectural parameters of the model whose KV cache is being stored.
///
/// Everything downstream (codec, block pool, file format, batch cache) is
/// written against this type only. K and V head dims may differ (MLA).
/// Construction validates every invariant and throws InvalidArgument.
class ModelCacheSpec {
public:
    struct Params {
        std::string model_id;
        uint32_t num_layers = 0;
        uint32_t num_kv_heads = 0;
        uint32_t num_query_heads = 0;
        uint32_t k_head_dim = 0;
        uint32_t v_head_dim = 0;
        std::vector<AttentionKind> layer_kinds;
        uint32_t block_tokens = 256;
        uint32_t group_size = 64;
        uint32_t fp_bytes_per_element = 2;
    };

    explicit ModelCacheSpec(Params params);

    const std::string& model_id() const noexcept { return p_.model_id; }
    uint32_t num_layers() const noexcept { return p_.num_layers; }
    uint32_t num_kv_heads() const noexcept { return p_.num_kv_heads; }
    uint32_t num_query_heads() const noexcept { return p_.num_query_heads; }
    uint32_t n_rep() const noexcept { return p_.num_query_heads / p_.num_kv_heads; }
    uint32_t k_head_dim() const noexcept { return p_.k_head_dim; }
    uint32_t v_head_dim() const noexcept { return p_.v_head_dim; }
    const std::vector<AttentionKind>& layer_kinds() const noexcept { return p_.layer_kinds; }
    const AttentionKind& layer_kind(uint32_t layer) const { return p_.layer_kinds.at(layer); }
    uint32_t block_tokens() const noexcept { return p_.block_tokens; }
    uint32_t group_size() const noexcept { return p_.group_size; }
    uint32_t fp_bytes_per_element() const noexcept { return p_.fp_bytes_per_element; }
    const Params& params() const noexcept { return p_; }

    /// Canonical key-sorted JSON object.
    nlohmann::json to_json() const;
    static ModelCacheSpec from_json(const nlohmann::json& j);

    bool operator==(const ModelCacheSpec& other) const;

private:
    Params p_;
};

/// 64-bit FNV-1a digest of the canonical JSON form.
uint64_t spec_fingerprint(const ModelCacheSpec& spec);

/// Known presets: "gemma3-12b", "deepseek-v2-lite-16b", "llama31-8b".
/// Throws NotFound for anything else.
ModelCacheSpec preset(std::string_view name);
std::vector<std::string> preset_names();

std::string fingerprint_hex(uint64_t fp);
uint64_t parse_fingerprint_hex(std::string_view hex);

}  // namespace agentcache
