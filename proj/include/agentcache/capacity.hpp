// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentcache/model_spec.hpp"

namespace agentcache {

struct CapacityRow {
    uint64_t context_tokens = 0;
    uint64_t fp16_bytes_per_agent = 0;
    uint64_t q4_bytes_per_agent = 0;
    /// nullopt when per-agent bytes are 0 (unbounded).
    std::optional<uint64_t> fp16_agents_fit;
    std::optional<uint64_t> q4_agents_fit;
};

struct CapacityOptions {
    /// Round contexts up to whole blocks before costing them.
    bool block_rounded = false;
};

/// Throws InvalidArgument when budget_bytes is 0.
std::vector<CapacityRow> capacity_table(const ModelCacheSpec& spec, uint64_t budget_bytes,
                                        std::span<const uint64_t> contexts, CapacityOptions options = {});

/// "10.2GB" -> floor(10.2 * 2^30). Units B, KB, MB, GB, TB (binary, also
/// accepted with an "iB" suffix); a bare number is bytes. Decimal fractions
/// are evaluated exactly.
uint64_t parse_byte_size(std::string_view text);

/// "4k" -> 4096, "32K" -> 32768, "1000" -> 1000.
uint64_t parse_context(std::string_view text);

std::vector<uint64_t> parse_context_list(std::string_view csv);

/// "4K" for multiples of 1024, otherwise the plain count.
std::string format_context(uint64_t tokens);

/// bytes / 2^30 with two decimals, e.g. "0.42".
std::string format_gb(uint64_t bytes);

/// Bytes / 2^20 when whole, e.g. "1536".
std::string format_mb(uint64_t bytes);

std::string format_fit(const std::optional<uint64_t>& fit);

nlohmann::json capacity_json(const ModelCacheSpec& spec, uint64_t budget_bytes, const std::vector<CapacityRow>& rows);

std::string capacity_text(const std::vector<CapacityRow>& rows);
std::string capacity_tsv(const std::vector<CapacityRow>& rows);

}  // namespace agentcache
