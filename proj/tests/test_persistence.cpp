// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "agentcache/error.hpp"
#include "agentcache/persistence.hpp"
#include "agentcache/safetensors.hpp"
#include "support.hpp"

namespace agentcache {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << data;
}

ErrorCode load_error(const CacheFilePair& pair, uint64_t fp) {
    try {
        load_agent(pair, fp);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::EngineFailure;  // sentinel: load succeeded
}

TEST(Safetensors, ContainerLayout) {
    safetensors::Writer w;
    w.add("b", "BF16", {2}, {0x80, 0x3f, 0x00, 0x40});
    w.add("a", "U32", {1, 2}, {1, 0, 0, 0, 2, 0, 0, 0});
    w.set_metadata("k", "v");
    const std::string file = w.serialize();

    uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(file[i]);
    EXPECT_EQ(n % 8, 0u);
    const std::string header = file.substr(8, n);
    const auto j = nlohmann::json::parse(header);
    EXPECT_EQ(j["__metadata__"]["k"], "v");
    // data is laid out in name order
    EXPECT_EQ(j["a"]["data_offsets"], nlohmann::json({0, 8}));
    EXPECT_EQ(j["b"]["data_offsets"], nlohmann::json({8, 12}));
    EXPECT_EQ(j["a"]["dtype"], "U32");
    EXPECT_EQ(j["a"]["shape"], nlohmann::json({1, 2}));
    EXPECT_EQ(header.find_last_not_of(' ') + 1, header.rfind('}') + 1);
    EXPECT_EQ(file.size(), 8 + n + 12);
    EXPECT_EQ(static_cast<unsigned char>(file[8 + n]), 1);
    EXPECT_EQ(static_cast<unsigned char>(file[8 + n + 4]), 2);

    const auto h = safetensors::parse_header(std::span(reinterpret_cast<const uint8_t*>(file.data()), file.size()),
                                             file.size());
    ASSERT_EQ(h.tensors.size(), 2u);
    EXPECT_EQ(h.tensors[0].name, "a");
    EXPECT_EQ(h.total_bytes(), file.size());
    EXPECT_EQ(h.metadata.at("k"), "v");
}

TEST(Safetensors, RejectsMalformedHeaders) {
    safetensors::Writer w;
    w.add("a", "U32", {2}, std::vector<uint8_t>(8, 7));
    const std::string good = w.serialize();
    const auto parse = [](const std::string& f) {
        return safetensors::parse_header(std::span(reinterpret_cast<const uint8_t*>(f.data()), f.size()), f.size());
    };
    EXPECT_NO_THROW(parse(good));
    EXPECT_THROW(parse(good.substr(0, good.size() - 1)), Error);
    EXPECT_THROW(parse(good + "x"), Error);
    EXPECT_THROW(parse(good.substr(0, 5)), Error);
    std::string bad_len = good;
    bad_len[7] = 0x7f;
    EXPECT_THROW(parse(bad_len), Error);
    std::string bad_json = good;
    bad_json[8] = '[';
    EXPECT_THROW(parse(bad_json), Error);
    std::string bad_dtype = good;
    bad_dtype.replace(bad_dtype.find("U32"), 3, "Q99");
    EXPECT_THROW(parse(bad_dtype), Error);
}

TEST(Persistence, PercentEncodedPaths) {
    const auto p = cache_paths("/tmp/x", "agent-1_ok");
    EXPECT_EQ(p.tensor_path.filename(), "agent-1_ok.safetensors");
    EXPECT_EQ(p.sidecar_path.filename(), "agent-1_ok.meta.json");
    EXPECT_EQ(cache_paths("/tmp/x", "a/b c").tensor_path.filename(), "a%2Fb%20c.safetensors");
    EXPECT_EQ(cache_paths("/tmp/x", "..").tensor_path.filename(), "%2E%2E.safetensors");
    EXPECT_THROW(cache_paths("/tmp/x", ""), Error);
}

TEST(Persistence, SaveLoadIdentity) {
    TempDir dir("persist");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(21);
    for (size_t tokens : {0u, 1u, 15u, 16u, 17u, 40u}) {
        const AgentCache c = testing::random_cache(spec, "agent " + std::to_string(tokens), tokens, rng);
        const auto pair = save_agent(c, spec, dir.path());
        const AgentCache back = load_agent(pair, spec_fingerprint(spec));
        EXPECT_TRUE(back.same_content(c)) << tokens;
        EXPECT_EQ(back.checksum(), c.checksum());
    }
}

TEST(Persistence, TensorNamesAndShapes) {
    TempDir dir("names");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(2);
    const AgentCache c = testing::random_cache(spec, "n", 20, rng);
    const auto pair = save_agent(c, spec, dir.path());
    const auto s = inspect(pair.tensor_path);
    EXPECT_EQ(s.header.tensors.size(), 2u * 2 * 6);  // layers x blocks x parts
    const auto* w = s.header.find("L1_B1_K_weights");
    ASSERT_NE(w, nullptr);
    EXPECT_EQ(w->dtype, "U32");
    EXPECT_EQ(w->shape, (std::vector<uint64_t>{2, 4, 4}));  // heads, tail tokens, 32/8
    const auto* sc = s.header.find("L0_B0_V_scales");
    ASSERT_NE(sc, nullptr);
    EXPECT_EQ(sc->dtype, "BF16");
    EXPECT_EQ(sc->shape, (std::vector<uint64_t>{2, 16, 1}));
    EXPECT_EQ(s.header.metadata.at("spec_fingerprint"), fingerprint_hex(spec_fingerprint(spec)));
    const auto side = nlohmann::json::parse(slurp(pair.sidecar_path));
    EXPECT_EQ(side["block_token_counts"], nlohmann::json({16, 4}));
    EXPECT_EQ(side["agent_id"], "n");
}

TEST(Persistence, SpecMismatchAndMissing) {
    TempDir dir("mismatch");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(4);
    const auto pair = save_agent(testing::random_cache(spec, "m", 5, rng), spec, dir.path());
    EXPECT_EQ(load_error(pair, spec_fingerprint(spec) ^ 1), ErrorCode::SpecMismatch);
    EXPECT_EQ(load_error(cache_paths(dir.path(), "nobody"), spec_fingerprint(spec)), ErrorCode::NotFound);
    fs::remove(pair.sidecar_path);
    EXPECT_EQ(load_error(pair, spec_fingerprint(spec)), ErrorCode::CorruptFile);
}

TEST(Persistence, CorruptionIsDetected) {
    TempDir dir("corrupt");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(8);
    const auto pair = save_agent(testing::random_cache(spec, "c", 30, rng), spec, dir.path());
    const std::string tensor = slurp(pair.tensor_path);
    const std::string side = slurp(pair.sidecar_path);
    const uint64_t fp = spec_fingerprint(spec);

    spit(pair.tensor_path, tensor.substr(0, tensor.size() / 2));
    EXPECT_EQ(load_error(pair, fp), ErrorCode::CorruptFile);

    std::string flipped = tensor;
    flipped[flipped.size() - 3] ^= 0x10;
    spit(pair.tensor_path, flipped);
    EXPECT_EQ(load_error(pair, fp), ErrorCode::CorruptFile);

    spit(pair.tensor_path, tensor);
    spit(pair.sidecar_path, side.substr(0, side.size() / 2));
    EXPECT_EQ(load_error(pair, fp), ErrorCode::CorruptFile);

    auto j = nlohmann::json::parse(side);
    j["token_ids"].erase(0);
    spit(pair.sidecar_path, j.dump());
    EXPECT_EQ(load_error(pair, fp), ErrorCode::CorruptFile);

    spit(pair.sidecar_path, side);
    EXPECT_NO_THROW(load_agent(pair, fp));
}

TEST(Persistence, CrashBeforeCommitKeepsOldVersion) {
    TempDir dir("crash1");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(9);
    const AgentCache v1 = testing::random_cache(spec, "x", 10, rng);
    const AgentCache v2 = testing::random_cache(spec, "x", 25, rng);
    save_agent(v1, spec, dir.path());
    SaveHooks crash{[](SaveStage s) {
        if (s == SaveStage::TempFilesWritten) throw std::runtime_error("crash");
    }};
    EXPECT_THROW(save_agent(v2, spec, dir.path(), crash), std::runtime_error);
    const auto back = load_agent(cache_paths(dir.path(), "x"), spec_fingerprint(spec));
    EXPECT_TRUE(back.same_content(v1));
    EXPECT_FALSE(fs::exists(dir.path() / "x.safetensors.tmp"));
}

TEST(Persistence, CrashAfterTensorCommitRollsForward) {
    TempDir dir("crash2");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(10);
    const AgentCache v1 = testing::random_cache(spec, "x", 10, rng);
    const AgentCache v2 = testing::random_cache(spec, "x", 25, rng);
    save_agent(v1, spec, dir.path());
    SaveHooks crash{[](SaveStage s) {
        if (s == SaveStage::TensorCommitted) throw std::runtime_error("crash");
    }};
    EXPECT_THROW(save_agent(v2, spec, dir.path(), crash), std::runtime_error);
    EXPECT_EQ(persisted_agents(dir.path()), std::vector<std::string>{"x"});
    const auto back = load_agent(cache_paths(dir.path(), "x"), spec_fingerprint(spec));
    EXPECT_TRUE(back.same_content(v2));
}

TEST(Persistence, FirstSaveCrashLeavesNothing) {
    TempDir dir("crash3");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(12);
    SaveHooks crash{[](SaveStage s) {
        if (s == SaveStage::TempFilesWritten) throw std::runtime_error("crash");
    }};
    EXPECT_THROW(save_agent(testing::random_cache(spec, "y", 3, rng), spec, dir.path(), crash), std::runtime_error);
    EXPECT_TRUE(persisted_agents(dir.path()).empty());
    EXPECT_EQ(load_error(cache_paths(dir.path(), "y"), spec_fingerprint(spec)), ErrorCode::NotFound);
}

TEST(Persistence, PersistedAgentsListsIds) {
    TempDir dir("list");
    const auto spec = testing::small_spec();
    std::mt19937_64 rng(13);
    for (const char* id : {"b", "a/x", "c"}) save_agent(testing::random_cache(spec, id, 2, rng), spec, dir.path());
    EXPECT_EQ(persisted_agents(dir.path()), (std::vector<std::string>{"a/x", "b", "c"}));
    EXPECT_TRUE(remove_pair(cache_paths(dir.path(), "b")));
    EXPECT_EQ(persisted_agents(dir.path()), (std::vector<std::string>{"a/x", "c"}));
}

}  // namespace
}  // namespace agentcache
