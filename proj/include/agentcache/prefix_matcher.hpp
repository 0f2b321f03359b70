// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "agentcache/agent_cache.hpp"

namespace agentcache {

enum class Verdict { Exact, Extend, Diverge };

std::string_view to_string(Verdict v) noexcept;

struct MatchResult {
    Verdict verdict = Verdict::Diverge;
    size_t common_chars = 0;
    size_t reuse_tokens = 0;
    size_t reuse_blocks = 0;
    /// Prompt text not covered by the reused tokens. Empty for Exact.
    std::string suffix_text;
    /// Code-point offset in the prompt where suffix_text starts.
    size_t suffix_char_offset = 0;

    nlohmann::json to_json() const;
};

/// Length of the longest common prefix, in code points. Inputs are UTF-8.
size_t common_prefix_chars(std::string_view a, std::string_view b) noexcept;

/// Minimum common-prefix / transcript-length ratio for partial reuse.
inline constexpr double kReuseThreshold = 0.5;

/// Compares a prompt with a cached transcript at the character level.
///
///   Exact   prompt == transcript
///   Extend  prompt strictly extends the transcript (all tokens reused), or
///           shares >= 50% of the transcript, in which case the tokens lying
///           wholly inside the common prefix are reused, rounded down to
///           whole blocks
///   Diverge anything else, including an empty transcript
MatchResult match(std::string_view transcript, std::span<const uint32_t> char_offsets, std::string_view prompt,
                  uint32_t block_tokens);

inline MatchResult match(const AgentCache& cached, std::string_view prompt, uint32_t block_tokens) {
    return match(cached.transcript_text, cached.char_offsets, prompt, block_tokens);
}

}  // namespace agentcache
