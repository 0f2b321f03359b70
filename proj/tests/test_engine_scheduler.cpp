// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <random>

#include "agentcache/error.hpp"
#include "agentcache/scenario.hpp"
#include "agentcache/scheduler.hpp"
#include "support.hpp"

namespace agentcache {
namespace {

using testing::TempDir;

std::string words(uint64_t stream, size_t n) { return scenario_text(7, stream, n); }

std::vector<Event> of_kind(const std::vector<Event>& ev, EventKind k) {
    std::vector<Event> out;
    for (const auto& e : ev) {
        if (e.kind == k) out.push_back(e);
    }
    return out;
}

struct Rig {
    explicit Rig(SchedulerConfig cfg = {}, uint64_t budget = 1ull << 30)
        : dir("sched"), engine(tiny_spec()), pool(tiny_spec(), PoolConfig{budget, dir.path()}), sched(engine, pool, cfg) {}
    TempDir dir;
    SyntheticEngine engine;
    BlockPool pool;
    Scheduler sched;
};

TEST(SyntheticEngine, TokenizerCoversTextAndIsStable) {
    SyntheticEngine e(tiny_spec());
    const std::string text = "  hello wörld\tabcdefghijklmnopqrstuvwxyz end";
    const Tokenized t = e.tokenize(text);
    ASSERT_FALSE(t.ids.empty());
    EXPECT_EQ(t.offsets.front(), 0u);
    for (size_t i = 1; i < t.size(); ++i) EXPECT_LT(t.offsets[i - 1], t.offsets[i]);
    EXPECT_EQ(t.ids, e.tokenize(text).ids);
    for (int32_t id : t.ids) EXPECT_GE(id, 0);
    // tokenizing a prefix at a token boundary reproduces the leading tokens
    const Tokenized head = e.tokenize("  hello");
    EXPECT_EQ(head.ids[0], t.ids[0]);
    EXPECT_EQ(e.tokenize("").size(), 0u);
}

TEST(SyntheticEngine, KvDependsOnPositionAndAgent) {
    EXPECT_EQ(SyntheticEngine::kv_value("a", 0, 5, 9, false, 0, 3), SyntheticEngine::kv_value("a", 0, 5, 9, false, 0, 3));
    EXPECT_NE(SyntheticEngine::kv_value("a", 0, 5, 9, false, 0, 3), SyntheticEngine::kv_value("b", 0, 5, 9, false, 0, 3));
    EXPECT_NE(SyntheticEngine::kv_value("a", 0, 5, 9, false, 0, 3), SyntheticEngine::kv_value("a", 0, 6, 9, false, 0, 3));
    const float v = SyntheticEngine::kv_value("a", 1, 2, 3, true, 1, 0);
    EXPECT_GE(v, -1.0f);
    EXPECT_LT(v, 1.0f);
}

TEST(Scheduler, EventsForThreeTokens) {
    Rig rig;
    rig.sched.submit({"r1", "a", words(1, 30), 3, true});
    const auto ev = rig.sched.run_until_idle();
    std::vector<EventKind> kinds;
    for (const auto& e : ev) {
        if (e.request_id == "r1") kinds.push_back(e.kind);
    }
    EXPECT_EQ(kinds, (std::vector<EventKind>{EventKind::FirstToken, EventKind::Token, EventKind::Token,
                                              EventKind::Done}));
    const auto done = of_kind(ev, EventKind::Done).at(0);
    EXPECT_TRUE(done.ok);
    EXPECT_EQ(done.detail.at("generated"), 3);
    EXPECT_EQ(done.detail.at("verdict"), "DIVERGE");
    std::string joined;
    for (const auto& e : ev) {
        if (e.kind == EventKind::FirstToken || e.kind == EventKind::Token) joined += e.text;
    }
    EXPECT_EQ(done.text, joined);
    for (size_t i = 1; i < ev.size(); ++i) EXPECT_LE(ev[i - 1].tick, ev[i].tick);
    EXPECT_TRUE(rig.sched.idle());
}

TEST(Scheduler, ResubmittingTheTranscriptIsExact) {
    Rig rig;
    const std::string prompt = words(2, 50);
    rig.sched.submit({"r1", "a", prompt, 4, true});
    const auto first = of_kind(rig.sched.run_until_idle(), EventKind::Done).at(0);
    const size_t prefilled = rig.engine.counters().tokens_prefilled;

    rig.sched.submit({"r2", "a", prompt + first.text, 2, true});
    const auto second = of_kind(rig.sched.run_until_idle(), EventKind::Done).at(0);
    EXPECT_EQ(second.detail.at("verdict"), "EXACT");
    EXPECT_EQ(second.detail.at("prefilled_tokens"), 0);
    EXPECT_EQ(rig.engine.counters().tokens_prefilled, prefilled);

    rig.sched.submit({"r3", "a", prompt + first.text + second.text + " more words here", 1, true});
    const auto third = of_kind(rig.sched.run_until_idle(), EventKind::Done).at(0);
    EXPECT_EQ(third.detail.at("verdict"), "EXTEND");
    EXPECT_GT(third.detail.at("reused_tokens").get<int>(), 50);
}

TEST(Scheduler, NonPersistentRequestsStartCold) {
    Rig rig;
    const std::string prompt = words(3, 20);
    rig.sched.submit({"r1", "a", prompt, 1, true});
    const auto first = of_kind(rig.sched.run_until_idle(), EventKind::Done).at(0);
    rig.sched.submit({"r2", "a", prompt + first.text, 1, false});
    const auto second = of_kind(rig.sched.run_until_idle(), EventKind::Done).at(0);
    EXPECT_EQ(second.detail.at("reused_tokens"), 0);
    EXPECT_GT(second.detail.at("prefilled_tokens").get<int>(), 0);
}

TEST(Scheduler, PrefillChunksInterleaveRoundRobin) {
    Rig rig(SchedulerConfig{16, 2});
    rig.sched.submit({"ra", "a", words(4, 40), 1, true});
    rig.sched.submit({"rb", "b", words(5, 40), 1, true});
    rig.sched.run_until_idle();
    std::vector<std::string> prefill_order;
    for (const auto& w : rig.sched.work_log()) {
        if (w.kind == WorkItem::Kind::Prefill) prefill_order.push_back(w.agent_ids.at(0));
    }
    ASSERT_GE(prefill_order.size(), 4u);
    EXPECT_EQ(prefill_order[0], "a");
    EXPECT_EQ(prefill_order[1], "b");
    EXPECT_EQ(prefill_order[2], "a");
    EXPECT_EQ(prefill_order[3], "b");
    for (const auto& w : rig.sched.work_log()) {
        if (w.kind == WorkItem::Kind::Prefill) {
            EXPECT_LE(w.tokens, 16u);
        }
    }
}

TEST(Scheduler, StaggeredArrivalJoinsTheDecodeBatch) {
    Rig rig(SchedulerConfig{16, 2});
    rig.sched.submit({"ra", "a", words(6, 20), 8, true});
    rig.sched.step();
    rig.sched.step();
    rig.sched.submit({"rb", "b", words(7, 10), 4, true});
    rig.sched.run_until_idle();
    bool batched = false;
    for (const auto& w : rig.sched.work_log()) {
        if (w.kind == WorkItem::Kind::Decode && w.agent_ids.size() == 2) batched = true;
    }
    EXPECT_TRUE(batched);
    EXPECT_EQ(rig.engine.counters().reentrancy_violations, 0u);
}

TEST(Scheduler, SameAgentRequestsAreSerialized) {
    Rig rig;
    const std::string prompt = words(8, 20);
    rig.sched.submit({"r1", "a", prompt, 2, true});
    rig.sched.submit({"r2", "a", prompt, 2, true});
    const auto ev = rig.sched.run_until_idle();
    const auto done = of_kind(ev, EventKind::Done);
    ASSERT_EQ(done.size(), 2u);
    EXPECT_EQ(done[0].request_id, "r1");
    // r2's prompt is a strict prefix of r1's result: partial reuse
    EXPECT_EQ(done[1].detail.at("verdict"), "EXTEND");
    for (const auto& w : rig.sched.work_log()) {
        if (w.kind == WorkItem::Kind::Decode) EXPECT_EQ(w.agent_ids.size(), 1u);
    }
}

TEST(Scheduler, FailureIsIsolatedToOneRequest) {
    Rig rig;
    rig.sched.submit({"ra", "a", words(9, 20), 3, true});
    rig.sched.submit({"rb", "b", words(10, 20), 3, true});
    rig.engine.inject_failure("b");
    const auto ev = rig.sched.run_until_idle();
    const auto done = of_kind(ev, EventKind::Done);
    ASSERT_EQ(done.size(), 2u);
    for (const auto& d : done) {
        if (d.request_id == "ra") {
            EXPECT_TRUE(d.ok);
            EXPECT_EQ(d.detail.at("generated"), 3);
        } else {
            EXPECT_FALSE(d.ok);
            EXPECT_FALSE(d.error.empty());
        }
    }
    EXPECT_TRUE(rig.sched.idle());
}

TEST(Scheduler, FailureDuringDecodeKeepsOtherRows) {
    Rig rig(SchedulerConfig{64, 2});
    rig.sched.submit({"ra", "a", words(11, 10), 6, true});
    rig.sched.submit({"rb", "b", words(12, 10), 6, true});
    std::vector<Event> ev;
    // run until both are decoding, then break b
    for (int i = 0; i < 4; ++i) {
        auto e = rig.sched.step();
        ev.insert(ev.end(), e.begin(), e.end());
    }
    rig.engine.inject_failure("b");
    auto rest = rig.sched.run_until_idle();
    ev.insert(ev.end(), rest.begin(), rest.end());
    for (const auto& d : of_kind(ev, EventKind::Done)) {
        EXPECT_EQ(d.ok, d.request_id == "ra") << d.request_id;
    }
    EXPECT_EQ(rig.sched.request_stats().at("ra").generated, 6u);
}

TEST(Scheduler, RejectsBadSubmissions) {
    Rig rig;
    rig.sched.submit({"r1", "a", "x", 1, true});
    EXPECT_THROW(rig.sched.submit({"r1", "b", "y", 1, true}), Error);
    EXPECT_THROW(rig.sched.submit({"r2", "b", "y", 0, true}), Error);
}

TEST(Scheduler, DeterministicAcrossRuns) {
    auto run = [] {
        Rig rig(SchedulerConfig{32, 2});
        for (int i = 0; i < 4; ++i) {
            rig.sched.submit({"r" + std::to_string(i), "agent" + std::to_string(i % 3), words(20 + i, 30), 3, true});
        }
        return events_to_jsonl(rig.sched.run_until_idle());
    };
    EXPECT_EQ(run(), run());
}

TEST(Scheduler, SaveRestoreAndEvictionEvents) {
    Rig rig(SchedulerConfig{64, 2}, 2 * q4_bytes(tiny_spec(), 64));
    for (int i = 0; i < 4; ++i) {
        rig.sched.submit({"r" + std::to_string(i), "ag" + std::to_string(i), words(30 + i, 40), 1, true});
    }
    const auto ev = rig.sched.run_until_idle();
    EXPECT_FALSE(of_kind(ev, EventKind::Evicted).empty());
    const auto saved = rig.sched.save_all();
    EXPECT_FALSE(of_kind(saved, EventKind::CacheSaved).empty());
    const auto loaded = rig.sched.restore({"ag0"});
    ASSERT_EQ(of_kind(loaded, EventKind::CacheLoaded).size(), 1u);
    EXPECT_EQ(rig.sched.match("nobody", "hi").verdict, Verdict::Diverge);
}

}  // namespace
}  // namespace agentcache
