// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>

#include "agentcache/bf16.hpp"
#include "agentcache/error.hpp"
#include "agentcache/quant_codec.hpp"
#include "support.hpp"

namespace agentcache {
namespace {

constexpr uint64_t kMiB = 1ull << 20;

// Independent bf16 rounding: keep 8 significant bits, ties to even.
float bf16_reference(float x) {
    int e = 0;
    const double m = std::frexp(static_cast<double>(x), &e);  // |m| in [0.5, 1)
    return static_cast<float>(std::ldexp(std::nearbyint(m * 256.0), e - 8));
}

TEST(Bf16, KnownValues) {
    EXPECT_EQ(float_to_bf16(1.0f), 0x3f80);
    EXPECT_EQ(float_to_bf16(-1.0f), 0xbf80);
    EXPECT_EQ(float_to_bf16(0.0f), 0x0000);
    EXPECT_EQ(float_to_bf16(0.2f), 0x3e4d);  // 0x3e4ccccd rounds up
    // tie: 0x3f808000 sits halfway between 0x3f80 and 0x3f81, goes to even
    EXPECT_EQ(float_to_bf16(std::bit_cast<float>(0x3f808000u)), 0x3f80);
    EXPECT_EQ(float_to_bf16(std::bit_cast<float>(0x3f818000u)), 0x3f82);
    EXPECT_TRUE(std::isnan(bf16_to_float(float_to_bf16(std::nanf("")))));
}

TEST(Bf16, MatchesReferenceOnRandomNormals) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> mant(1.0f, 2.0f);
    std::uniform_int_distribution<int> ex(-60, 60);
    for (int i = 0; i < 200000; ++i) {
        float x = std::ldexp(mant(rng), ex(rng));
        if (i % 2) x = -x;
        ASSERT_EQ(round_to_bf16(x), bf16_reference(x)) << x;
    }
}

TEST(QuantGroup, HandComputedExample) {
    // lo = -1, hi = 2, step 3/15 = 0.2 -> bf16 0x3e4d = 0.2001953125
    const std::vector<float> v = {-1.0f, 2.0f, 0.5f, 0.0f, 1.0f, -0.4f, 1.9f, 0.1f};
    std::vector<uint8_t> codes(8);
    const auto p = quantize_group(v, codes);
    EXPECT_EQ(p.bias, 0xbf80);
    EXPECT_EQ(p.scale, 0x3e4d);
    EXPECT_EQ(codes, (std::vector<uint8_t>{0, 15, 7, 5, 10, 3, 14, 5}));
}

TEST(QuantGroup, IntegerRampIsExact) {
    std::vector<float> v(16);
    for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
    std::vector<uint8_t> codes(16);
    const auto p = quantize_group(v, codes);
    EXPECT_EQ(p.scale, 0x3f80);
    EXPECT_EQ(p.bias, 0x0000);
    for (int i = 0; i < 16; ++i) EXPECT_EQ(codes[i], i);
}

TEST(QuantGroup, DegenerateGroup) {
    const std::vector<float> v(64, 3.5f);
    std::vector<uint8_t> codes(64, 9);
    const auto p = quantize_group(v, codes);
    EXPECT_EQ(p.scale, 0x3f80);
    EXPECT_EQ(bf16_to_float(p.bias), 3.5f);
    for (auto c : codes) EXPECT_EQ(c, 0);
}

TEST(QuantGroup, RejectsNonFinite) {
    std::vector<float> v(8, 0.0f);
    v[3] = INFINITY;
    std::vector<uint8_t> codes(8);
    EXPECT_THROW(quantize_group(v, codes), Error);
    v[3] = std::nanf("");
    EXPECT_THROW(quantize_group(v, codes), Error);
}

TEST(Packing, NibbleOrder) {
    const std::vector<uint8_t> codes = {0, 1, 2, 3, 4, 5, 6, 7, 15, 14, 13, 12, 11, 10, 9, 8};
    std::vector<uint32_t> words(2);
    pack_codes(codes, words);
    EXPECT_EQ(words[0], 0x76543210u);
    EXPECT_EQ(words[1], 0x89abcdefu);
    std::vector<uint8_t> back(16);
    unpack_codes(words, back);
    EXPECT_EQ(back, codes);
    EXPECT_EQ(unpack_code(words, 9), 14);
}

TEST(QuantTensor, ShapesAndRoundTripBound) {
    std::mt19937_64 rng(3);
    const Tensor t = testing::random_tensor({3, 5, 128}, rng);
    const QuantizedTensor q = quantize_tensor(t, 64);
    EXPECT_EQ(q.heads, 3u);
    EXPECT_EQ(q.tokens, 5u);
    EXPECT_EQ(q.packed.size(), 3u * 5 * 16);
    EXPECT_EQ(q.scales.size(), 3u * 5 * 2);
    const Tensor back = dequantize_tensor(q);
    for (size_t r = 0; r < 15; ++r) {
        for (size_t g = 0; g < 2; ++g) {
            const float scale = bf16_to_float(q.scales[r * 2 + g]);
            for (size_t d = 0; d < 64; ++d) {
                const size_t i = r * 128 + g * 64 + d;
                EXPECT_LE(std::abs(t.data()[i] - back.data()[i]), 0.5f * scale * (1.0f + 1.0f / 128.0f));
            }
        }
    }
}

TEST(QuantTensor, SpecShapeCheck) {
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(1);
    EXPECT_NO_THROW(quantize_tensor(testing::random_tensor({2, 4, 32}, rng), spec, KVRole::Key));
    EXPECT_NO_THROW(quantize_tensor(testing::random_tensor({2, 4, 16}, rng), spec, KVRole::Value));
    EXPECT_THROW(quantize_tensor(testing::random_tensor({2, 4, 16}, rng), spec, KVRole::Key), Error);
    EXPECT_THROW(quantize_tensor(testing::random_tensor({3, 4, 32}, rng), spec, KVRole::Key), Error);
    EXPECT_THROW(quantize_tensor(testing::random_tensor({2, 4, 12}, rng), 4), Error);
}

TEST(QuantTensor, SliceAndAppendAreInverse) {
    std::mt19937_64 rng(5);
    const QuantizedTensor q = quantize_tensor(testing::random_tensor({2, 9, 16}, rng), 16);
    for (uint32_t cut = 0; cut <= 9; ++cut) {
        QuantizedTensor a = slice_tokens(q, 0, cut);
        append_tokens(a, slice_tokens(q, cut, 9));
        EXPECT_EQ(a, q) << cut;
    }
    EXPECT_THROW(slice_tokens(q, 4, 10), Error);
}

TEST(Memory, ByteFormulasMatchClosedForm) {
    // q4 bytes of one tensor = h*d*n/2 + 4*h*n*(d/g)
    EXPECT_EQ(q4_tensor_bytes(8, 256, 4096, 64), 8ull * 256 * 4096 / 2 + 4ull * 8 * 4096 * 4);
    const auto gemma = preset("gemma3-12b");
    EXPECT_EQ(fp16_layer_bytes(gemma, 4096), 33554432u);
    EXPECT_EQ(q4_layer_bytes(gemma, 4096), 9437184u);
    EXPECT_EQ(fp16_bytes(gemma, 4096), 1536 * kMiB);
    EXPECT_EQ(q4_bytes(gemma, 4096), 432 * kMiB);

    const auto llama = preset("llama31-8b");
    EXPECT_EQ(fp16_layer_bytes(llama, 4096), 16777216u);
    EXPECT_EQ(fp16_bytes(llama, 4096), 512 * kMiB);
    EXPECT_EQ(q4_bytes(llama, 4096), 144 * kMiB);

    const auto ds = preset("deepseek-v2-lite-16b");
    EXPECT_EQ(fp16_layer_bytes(ds, 4096), 25165824u + 16777216u);
    EXPECT_EQ(fp16_bytes(ds, 4096), 1080 * kMiB);
    // 303.75 MiB, reported rounded as 304
    EXPECT_EQ(q4_bytes(ds, 4096), 318504960u);
    EXPECT_EQ(std::llround(static_cast<double>(q4_bytes(ds, 4096)) / kMiB), 304);
}

TEST(Memory, RatioIsExact) {
    EXPECT_EQ(memory_ratio(64), 0.28125);
    for (const auto& name : {"gemma3-12b", "llama31-8b"}) {
        const auto s = preset(name);
        for (uint64_t n : {1ull, 100ull, 4096ull, 32768ull}) {
            // exact as a fraction: 32 * q4 == 9 * fp16
            EXPECT_EQ(32 * q4_bytes(s, n * 64), 9 * fp16_bytes(s, n * 64)) << name;
        }
    }
    // the ratio also holds per tensor for asymmetric K/V dims
    const auto ds = preset("deepseek-v2-lite-16b");
    EXPECT_EQ(32 * q4_bytes(ds, 4096), 9 * fp16_bytes(ds, 4096));
}

}  // namespace
}  // namespace agentcache
