// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <bit>
#include <cstdint>

namespace agentcache {

/// bfloat16 is the upper half of an IEEE-754 binary32. Conversion rounds to
/// nearest, ties to even, on bit 16. NaNs stay quiet NaNs.
constexpr uint16_t float_to_bf16(float value) noexcept {
    const uint32_t bits = std::bit_cast<uint32_t>(value);
    if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x007fffffu) != 0) {
        return static_cast<uint16_t>((bits >> 16) | 0x0040u);
    }
    const uint32_t lsb = (bits >> 16) & 1u;
    return static_cast<uint16_t>((bits + 0x7fffu + lsb) >> 16);
}

constexpr float bf16_to_float(uint16_t value) noexcept {
    return std::bit_cast<float>(static_cast<uint32_t>(value) << 16);
}

constexpr float round_to_bf16(float value) noexcept { return bf16_to_float(float_to_bf16(value)); }

}  // namespace agentcache
