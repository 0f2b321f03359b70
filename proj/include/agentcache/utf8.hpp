// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace agentcache::utf8 {

constexpr bool is_continuation(unsigned char c) noexcept { return (c & 0xc0u) == 0x80u; }

/// Number of code points (counts every non-continuation byte).
size_t length(std::string_view s) noexcept;

/// Byte offset where code point `index` starts; s.size() when index == length.
size_t byte_offset(std::string_view s, size_t index) noexcept;

/// Suffix starting at code point `index`.
std::string_view drop(std::string_view s, size_t index) noexcept;

/// Decodes into code points. Malformed sequences decode byte-wise.
std::u32string decode(std::string_view s);

}  // namespace agentcache::utf8
