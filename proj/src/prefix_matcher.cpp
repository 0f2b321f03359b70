// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/prefix_matcher.hpp"

#include <algorithm>
#include <cstring>

#include "agentcache/utf8.hpp"

namespace agentcache {

std::string_view to_string(Verdict v) noexcept {
    switch (v) {
    case Verdict::Exact: return "EXACT";
    case Verdict::Extend: return "EXTEND";
    case Verdict::Diverge: return "DIVERGE";
    }
    return "UNKNOWN";
}

nlohmann::json MatchResult::to_json() const {
    return {{"verdict", to_string(verdict)},     {"common_chars", common_chars},
            {"reuse_tokens", reuse_tokens},      {"reuse_blocks", reuse_blocks},
            {"suffix_text", suffix_text},        {"suffix_char_offset", suffix_char_offset}};
}

size_t common_prefix_chars(std::string_view a, std::string_view b) noexcept {
    const size_t n = std::min(a.size(), b.size());
    size_t i = 0;
    // word-sized compare first
    while (i + 8 <= n) {
        uint64_t x, y;
        std::memcpy(&x, a.data() + i, 8);
        std::memcpy(&y, b.data() + i, 8);
        if (x != y) break;
        i += 8;
    }
    while (i < n && a[i] == b[i]) ++i;
    if (i < n || a.size() != b.size()) {
        // a partially matched multi-byte sequence is not a common character
        while (i > 0 && i < std::max(a.size(), b.size()) &&
               utf8::is_continuation(static_cast<unsigned char>(i < a.size() ? a[i] : b[i]))) {
            --i;
        }
    }
    return utf8::length(a.substr(0, i));
}

MatchResult match(std::string_view transcript, std::span<const uint32_t> char_offsets, std::string_view prompt,
                  uint32_t block_tokens) {
    MatchResult r;
    const size_t cached_len = utf8::length(transcript);
    const size_t prompt_len = utf8::length(prompt);
    const size_t tokens = char_offsets.size();
    r.common_chars = common_prefix_chars(transcript, prompt);
    r.suffix_text = std::string(prompt);
    if (cached_len == 0) return r;

    const size_t c = r.common_chars;
    if (c == cached_len && c == prompt_len) {
        r.verdict = Verdict::Exact;
        r.reuse_tokens = tokens;
        r.reuse_blocks = (tokens + block_tokens - 1) / block_tokens;
        r.suffix_text.clear();
        r.suffix_char_offset = prompt_len;
        return r;
    }
    if (c == cached_len) {
        r.verdict = Verdict::Extend;
        r.reuse_tokens = tokens;
        r.reuse_blocks = (tokens + block_tokens - 1) / block_tokens;
        r.suffix_char_offset = cached_len;
        r.suffix_text = std::string(utf8::drop(prompt, cached_len));
        return r;
    }
    if (static_cast<double>(c) / static_cast<double>(cached_len) < kReuseThreshold) return r;

    // token k ends where token k+1 begins; the last one ends at the transcript end
    auto token_end = [&](size_t k) { return k + 1 < tokens ? char_offsets[k + 1] : cached_len; };
    size_t whole = 0;
    while (whole < tokens && token_end(whole) <= c) ++whole;

    r.verdict = Verdict::Extend;
    r.reuse_blocks = whole / block_tokens;
    r.reuse_tokens = r.reuse_blocks * block_tokens;
    r.suffix_char_offset = r.reuse_tokens < tokens ? char_offsets[r.reuse_tokens] : cached_len;
    if (r.reuse_tokens == 0) r.suffix_char_offset = 0;
    r.suffix_text = std::string(utf8::drop(prompt, r.suffix_char_offset));
    return r;
}

}  // namespace agentcache
