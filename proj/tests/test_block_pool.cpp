// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "agentcache/block_pool.hpp"
#include "agentcache/error.hpp"
#include "support.hpp"

namespace agentcache {
namespace {

using testing::TempDir;

struct Chunk {
    std::vector<LayerKV> kv;
    std::vector<int32_t> ids;
    std::vector<uint32_t> offsets;
    std::string text;
};

Chunk make_chunk(const ModelCacheSpec& spec, size_t n, std::mt19937_64& rng) {
    Chunk c;
    for (uint32_t l = 0; l < spec.num_layers(); ++l) {
        c.kv.push_back({testing::random_tensor({spec.num_kv_heads(), n, spec.k_head_dim()}, rng),
                        testing::random_tensor({spec.num_kv_heads(), n, spec.v_head_dim()}, rng)});
    }
    for (size_t i = 0; i < n; ++i) {
        c.ids.push_back(static_cast<int32_t>(rng() & 0xffff));
        c.offsets.push_back(static_cast<uint32_t>(i));
        c.text += static_cast<char>('a' + rng() % 26);
    }
    return c;
}

size_t append(BlockPool& pool, const std::string& id, const Chunk& c) {
    return pool.append_tokens(id, c.kv, TokenAppend{c.ids, c.offsets, c.text});
}

uint64_t agent_bytes(const ModelCacheSpec& spec, size_t tokens) {
    return q4_bytes(spec, tokens);
}

TEST(BlockPool, AppendFillsTailBlockFirst) {
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, {}});
    std::mt19937_64 rng(1);
    const Chunk a = make_chunk(spec, 10, rng);
    const Chunk b = make_chunk(spec, 10, rng);
    EXPECT_EQ(append(pool, "x", a), 10u);
    EXPECT_EQ(append(pool, "x", b), 20u);
    const AgentCache& c = pool.get_cache("x");
    EXPECT_EQ(block_token_counts(c.blocks), (std::vector<uint32_t>{16, 4}));
    EXPECT_EQ(c.transcript_text, a.text + b.text);
    EXPECT_EQ(c.char_offsets[10], 10u);

    // same bytes as quantizing the concatenation in one go
    for (uint32_t l = 0; l < spec.num_layers(); ++l) {
        Tensor k({spec.num_kv_heads(), 20, spec.k_head_dim()});
        for (uint32_t h = 0; h < spec.num_kv_heads(); ++h) {
            for (size_t t = 0; t < 20; ++t) {
                for (uint32_t d = 0; d < spec.k_head_dim(); ++d) {
                    k.at(h, t, d) = t < 10 ? a.kv[l].k.at(h, t, d) : b.kv[l].k.at(h, t - 10, d);
                }
            }
        }
        EXPECT_EQ(concat_layer(c.blocks[l], spec).first, quantize_tensor(k, spec.group_size()));
    }
    EXPECT_EQ(pool.stats().resident_bytes, agent_bytes(spec, 20));
}

TEST(BlockPool, RejectsBadShapesWithoutMutation) {
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, {}});
    std::mt19937_64 rng(2);
    Chunk c = make_chunk(spec, 4, rng);
    append(pool, "x", c);
    const uint64_t sum = pool.checksum("x");
    Chunk bad = make_chunk(spec, 4, rng);
    bad.kv.pop_back();
    EXPECT_THROW(append(pool, "x", bad), Error);
    bad = make_chunk(spec, 4, rng);
    bad.offsets.pop_back();
    EXPECT_THROW(append(pool, "x", bad), Error);
    bad = make_chunk(spec, 4, rng);
    bad.offsets[1] = 9;  // past the appended text
    EXPECT_THROW(append(pool, "x", bad), Error);
    EXPECT_EQ(pool.checksum("x"), sum);
}

TEST(BlockPool, LruEvictionPersistsAndReloads) {
    TempDir dir("lru");
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{2 * agent_bytes(spec, 20), dir.path()});
    std::mt19937_64 rng(3);
    append(pool, "a", make_chunk(spec, 20, rng));
    append(pool, "b", make_chunk(spec, 20, rng));
    const uint64_t sum_a = pool.checksum("a");
    std::vector<std::string> evicted;
    pool.set_eviction_listener([&](const std::string& id, uint64_t) { evicted.push_back(id); });

    append(pool, "c", make_chunk(spec, 20, rng));
    EXPECT_EQ(evicted, std::vector<std::string>{"a"});
    EXPECT_EQ(pool.state("a"), CacheState::Warm);
    EXPECT_TRUE(pool.on_disk("a"));
    EXPECT_EQ(pool.checksum("a"), sum_a);  // read back from disk

    // touching b makes c the LRU victim when a comes back
    pool.get_cache("b");
    const AgentCache& a = pool.get_cache("a");
    EXPECT_EQ(a.checksum(), sum_a);
    EXPECT_EQ(a.state, CacheState::Hot);
    EXPECT_EQ(evicted.back(), "c");
    const PoolStats s = pool.stats();
    EXPECT_EQ(s.evictions, 2u);
    EXPECT_EQ(s.reloads, 1u);
    EXPECT_LE(s.resident_bytes, s.budget_bytes);
    EXPECT_FALSE(s.over_budget);
}

TEST(BlockPool, ExplicitEvictLru) {
    TempDir dir("evict");
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, dir.path()});
    std::mt19937_64 rng(4);
    EXPECT_EQ(pool.evict_lru(), std::nullopt);
    append(pool, "b", make_chunk(spec, 3, rng));
    append(pool, "a", make_chunk(spec, 3, rng));
    EXPECT_EQ(pool.evict_lru(), "b");
    EXPECT_EQ(pool.evict_lru(), "a");
    EXPECT_EQ(pool.evict_lru(), std::nullopt);
    EXPECT_EQ(pool.stats().resident_bytes, 0u);
}

TEST(BlockPool, EvictionFailureLeavesAgentHot) {
    const auto spec = testing::small_spec();
    // no cache directory: nothing can be persisted
    BlockPool pool(spec, PoolConfig{agent_bytes(spec, 10), {}});
    std::mt19937_64 rng(5);
    append(pool, "a", make_chunk(spec, 10, rng));
    append(pool, "b", make_chunk(spec, 10, rng));
    const PoolStats s = pool.stats();
    EXPECT_TRUE(s.over_budget);
    EXPECT_GE(s.eviction_failures, 1u);
    EXPECT_EQ(pool.state("a"), CacheState::Hot);
    EXPECT_THROW(pool.evict_lru(), Error);
}

TEST(BlockPool, DropPersistsUnlessDeleting) {
    TempDir dir("drop");
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, dir.path()});
    std::mt19937_64 rng(6);
    append(pool, "a", make_chunk(spec, 7, rng));
    const uint64_t sum = pool.checksum("a");
    pool.drop_agent("a", false);
    EXPECT_FALSE(pool.contains("a"));
    EXPECT_EQ(pool.state("a"), CacheState::Warm);
    EXPECT_EQ(pool.get_cache("a").checksum(), sum);
    pool.drop_agent("a", true);
    EXPECT_FALSE(pool.on_disk("a"));
    EXPECT_THROW(pool.get_cache("a"), Error);
    EXPECT_THROW(pool.drop_agent("a", true), Error);
}

TEST(BlockPool, TruncateAndReset) {
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, {}});
    std::mt19937_64 rng(7);
    const Chunk c = make_chunk(spec, 40, rng);
    append(pool, "a", c);
    pool.truncate("a", 32);
    const AgentCache& t = pool.get_cache("a");
    EXPECT_EQ(t.token_count(), 32u);
    EXPECT_EQ(t.transcript_text, c.text.substr(0, 32));
    EXPECT_EQ(block_token_counts(t.blocks), (std::vector<uint32_t>{16, 16}));
    EXPECT_EQ(pool.stats().resident_bytes, agent_bytes(spec, 32));
    EXPECT_THROW(pool.truncate("a", 33), Error);
    pool.reset("a", false);
    EXPECT_EQ(pool.get_cache("a").token_count(), 0u);
    EXPECT_EQ(pool.stats().resident_bytes, 0u);
}

TEST(BlockPool, InsertChecksFingerprint) {
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{1 << 30, {}});
    std::mt19937_64 rng(8);
    AgentCache c = testing::random_cache(spec, "z", 5, rng);
    pool.insert(c);
    EXPECT_TRUE(pool.get_cache("z").same_content(c));
    c.spec_fingerprint ^= 1;
    EXPECT_THROW(pool.insert(c), Error);
}

TEST(BlockPool, MutationsDoNotTouchOtherAgents) {
    TempDir dir("iso");
    const auto spec = testing::small_spec();
    BlockPool pool(spec, PoolConfig{3 * agent_bytes(spec, 30), dir.path()});
    std::mt19937_64 rng(9);
    for (const char* id : {"a", "b", "c", "d"}) append(pool, id, make_chunk(spec, 12, rng));
    std::map<std::string, uint64_t> sums;
    for (const char* id : {"a", "b", "c", "d"}) sums[id] = pool.checksum(id);
    for (int i = 0; i < 200; ++i) {
        const std::string target(1, static_cast<char>('a' + rng() % 4));
        switch (rng() % 4) {
            case 0: append(pool, target, make_chunk(spec, 1 + rng() % 9, rng)); break;
            case 1: pool.truncate(target, pool.get_cache(target).token_count() / 2); break;
            case 2: pool.evict_lru(); break;
            default: pool.drop_agent(target, false); break;
        }
        sums[target] = pool.checksum(target);
        for (const auto& [id, sum] : sums) ASSERT_EQ(pool.checksum(id), sum) << "step " << i;
    }
}

}  // namespace
}  // namespace agentcache
