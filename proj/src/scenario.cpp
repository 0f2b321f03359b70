// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/scenario.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>

#include "agentcache/block_pool.hpp"
#include "agentcache/engine.hpp"
#include "agentcache/error.hpp"

namespace agentcache {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 48> kWords = {
    "the",      "agent",    "cache",   "block",   "token",   "prompt",   "memory",  "layer",
    "context",  "phase",    "round",   "offer",   "accept",  "decline",  "trust",   "score",
    "report",   "summary",  "expert",  "query",   "answer",  "reason",   "plan",    "review",
    "evidence", "decision", "history", "message", "signal",  "strategy", "outcome", "payoff",
    "move",     "turn",     "state",   "update",  "cooperate", "defect", "observe", "respond",
    "analysis", "draft",    "revise",  "final",   "note",    "question", "result",  "détail",
};

struct Pending {
    const ScenarioTurn* turn;
    std::string prompt;
    std::string request_id;
    bool submitted = false;
};

}  // namespace

std::string scenario_text(uint64_t seed, uint64_t stream, size_t words) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + stream);
    std::string out;
    for (size_t i = 0; i < words; ++i) {
        out += (i % 17 == 16) ? "\n" : " ";
        out += kWords[rng() % kWords.size()];
        if (i % 11 == 10) out += '.';
    }
    return out;
}

std::vector<std::string> scenario_names() { return {"phase5", "routing10", "staggered"}; }

std::vector<ScenarioPhase> build_scenario(std::string_view name, uint64_t seed) {
    std::vector<ScenarioPhase> phases;
    uint64_t stream = 0;
    if (name == "phase5") {
        const std::array<std::string, 3> permanent = {"alice", "bob", "carol"};
        for (int p = 1; p <= 5; ++p) {
            ScenarioPhase ph{"phase" + std::to_string(p), {}};
            for (const auto& a : permanent) {
                ph.turns.push_back({a, scenario_text(seed, ++stream, p == 1 ? 400 : 150), 8, true, 0});
            }
            if (p == 5) ph.turns.push_back({"dave", scenario_text(seed, ++stream, 300), 8, false, 0});
            phases.push_back(std::move(ph));
        }
    } else if (name == "routing10") {
        ScenarioPhase prime{"prime", {}};
        for (int e = 0; e < 10; ++e) {
            prime.turns.push_back({"expert" + std::to_string(e), scenario_text(seed, ++stream, 250), 4, true, 0});
        }
        ScenarioPhase query{"query", {}};
        std::mt19937_64 rng(seed);
        for (int q = 0; q < 20; ++q) {
            query.turns.push_back(
                {"expert" + std::to_string(rng() % 10), scenario_text(seed, ++stream, 40), 8, true, 0});
        }
        phases = {std::move(prime), std::move(query)};
    } else if (name == "staggered") {
        ScenarioPhase prime{"prime", {}};
        prime.turns.push_back({"a", scenario_text(seed, ++stream, 200), 4, true, 0});
        prime.turns.push_back({"b", scenario_text(seed, ++stream, 200), 4, true, 0});
        ScenarioPhase stag{"staggered", {}};
        stag.turns.push_back({"a", scenario_text(seed, ++stream, 1500), 8, true, 0});
        stag.turns.push_back({"b", scenario_text(seed, ++stream, 1000), 8, true, 2});
        phases = {std::move(prime), std::move(stag)};
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + std::string(name) + "'");
    }
    return phases;
}

ModeResult run_phases(const std::vector<ScenarioPhase>& phases, bool persistent, const ScenarioOptions& options) {
    ModeResult result;
    result.mode = persistent ? "persistent" : "cold";
    const bool own_dir = options.cache_dir.empty();
    const fs::path dir = own_dir ? fs::temp_directory_path() / ("agentcache-scenario-" + std::to_string(::getpid()) +
                                                                 "-" + result.mode)
                                 : options.cache_dir / result.mode;
    fs::remove_all(dir);
    fs::create_directories(dir);

    SyntheticEngine engine(resolve_spec(options.model));
    BlockPool pool(engine.spec(), PoolConfig{options.budget_bytes, dir});
    Scheduler sched(engine, pool, SchedulerConfig{options.chunk_tokens, options.max_batch});
    std::map<std::string, std::string> history;

    const auto record = [&](const std::vector<Event>& events, const std::string& phase) {
        for (const auto& e : events) {
            json j = e.to_json();
            j["mode"] = result.mode;
            j["phase"] = phase;
            result.trace.push_back(std::move(j));
        }
    };

    for (const auto& phase : phases) {
        PhaseResult pr;
        pr.name = phase.name;
        const EngineCounters e0 = engine.counters();
        const PoolStats s0 = pool.stats();
        const size_t w0 = sched.work_log().size();
        const uint64_t reused0 = sched.counters().reused_tokens;

        std::vector<Pending> pending;
        for (size_t i = 0; i < phase.turns.size(); ++i) {
            const ScenarioTurn& t = phase.turns[i];
            const std::string base = t.permanent ? history[t.agent] : std::string();
            pending.push_back({&t, base + t.new_text, phase.name + "-" + std::to_string(i) + "-" + t.agent});
        }
        uint32_t steps = 0;
        while (true) {
            bool all_submitted = true;
            for (auto& p : pending) {
                if (!p.submitted && p.turn->submit_after_steps <= steps) {
                    sched.submit(Request{p.request_id, p.turn->agent, p.prompt, p.turn->max_tokens,
                                         persistent && p.turn->permanent});
                    p.submitted = true;
                }
                all_submitted &= p.submitted;
            }
            if (sched.idle()) {
                if (all_submitted) break;
                ++steps;  // nothing to run until the next arrival
                continue;
            }
            const auto events = sched.step();
            ++steps;
            record(events, phase.name);
            for (const auto& e : events) {
                if (e.kind != EventKind::Done || !e.ok) continue;
                for (const auto& p : pending) {
                    if (p.request_id == e.request_id && p.turn->permanent) history[p.turn->agent] = p.prompt + e.text;
                }
            }
        }
        if (persistent) {
            record(sched.save_all(), phase.name);
            for (const auto& id : pool.agent_ids()) sched.drop(id, false);
        }

        for (const auto& p : pending) {
            const RequestStats& st = sched.request_stats().at(p.request_id);
            pr.turns.push_back({p.turn->agent, p.request_id, st.verdict, st.prompt_tokens, st.reused_tokens,
                                st.prefilled_tokens, st.generated, st.ok});
        }
        pr.engine_prefill_tokens = engine.counters().tokens_prefilled - e0.tokens_prefilled;
        pr.reused_tokens = sched.counters().reused_tokens - reused0;
        const PoolStats s1 = pool.stats();
        pr.evictions = s1.evictions - s0.evictions;
        pr.reloads = s1.reloads - s0.reloads;
        for (size_t i = w0; i < sched.work_log().size(); ++i) {
            const WorkItem& w = sched.work_log()[i];
            std::string label;
            for (const auto& a : w.agent_ids) label += (label.empty() ? "" : "+") + a;
            pr.work_order.push_back((w.kind == WorkItem::Kind::Prefill ? "P:" : "D:") + label);
        }
        result.phases.push_back(std::move(pr));
    }
    if (own_dir) fs::remove_all(dir);
    return result;
}

ScenarioReport run_scenario(std::string_view name, const ScenarioOptions& options) {
    const auto phases = build_scenario(name, options.seed);
    ScenarioReport report;
    report.name = std::string(name);
    report.seed = options.seed;
    report.cold = run_phases(phases, false, options);
    report.persistent = run_phases(phases, true, options);
    return report;
}

namespace {

json mode_json(const ModeResult& m) {
    json phases = json::array();
    for (const auto& p : m.phases) {
        json turns = json::array();
        for (const auto& t : p.turns) {
            turns.push_back({{"agent", t.agent},
                             {"request_id", t.request_id},
                             {"verdict", to_string(t.verdict)},
                             {"prompt_tokens", t.prompt_tokens},
                             {"reused_tokens", t.reused_tokens},
                             {"prefilled_tokens", t.prefilled_tokens},
                             {"generated", t.generated},
                             {"ok", t.ok}});
        }
        uint64_t prompt = 0;
        for (const auto& t : p.turns) prompt += t.prompt_tokens;
        phases.push_back({{"phase", p.name},
                          {"prompt_tokens", prompt},
                          {"engine_prefill_tokens", p.engine_prefill_tokens},
                          {"reused_tokens", p.reused_tokens},
                          {"reuse_ratio", prompt == 0 ? 0.0 : static_cast<double>(p.reused_tokens) / prompt},
                          {"evictions", p.evictions},
                          {"reloads", p.reloads},
                          {"work_order", p.work_order},
                          {"turns", std::move(turns)}});
    }
    return {{"mode", m.mode}, {"phases", std::move(phases)}};
}

}  // namespace

json ScenarioReport::to_json() const {
    return {{"scenario", name}, {"seed", seed}, {"cold", mode_json(cold)}, {"persistent", mode_json(persistent)}};
}

std::string ScenarioReport::table() const {
    std::string out = "scenario " + name + " (seed " + std::to_string(seed) + ")\n";
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-10s %-11s %8s %8s %10s %7s %9s %7s\n", "phase", "mode", "prompt", "reused",
                  "prefilled", "ratio", "evictions", "reloads");
    out += buf;
    for (size_t i = 0; i < persistent.phases.size(); ++i) {
        for (const ModeResult* m : {&cold, &persistent}) {
            const PhaseResult& p = m->phases[i];
            uint64_t prompt = 0;
            for (const auto& t : p.turns) prompt += t.prompt_tokens;
            std::snprintf(buf, sizeof buf, "%-10s %-11s %8llu %8llu %10llu %7.3f %9llu %7llu\n", p.name.c_str(),
                          m->mode.c_str(), static_cast<unsigned long long>(prompt),
                          static_cast<unsigned long long>(p.reused_tokens),
                          static_cast<unsigned long long>(p.engine_prefill_tokens),
                          prompt == 0 ? 0.0 : static_cast<double>(p.reused_tokens) / static_cast<double>(prompt),
                          static_cast<unsigned long long>(p.evictions), static_cast<unsigned long long>(p.reloads));
            out += buf;
        }
    }
    return out;
}

std::string ScenarioReport::trace_jsonl() const {
    std::string out;
    for (const ModeResult* m : {&cold, &persistent}) {
        for (const auto& j : m->trace) out += j.dump() + "\n";
    }
    return out;
}

std::string ScenarioReport::svg() const {
    const size_t n = persistent.phases.size();
    const int group_w = 90;
    const int bar_w = 24;
    const int height = 240;
    const int top = 30;
    const int left = 50;
    uint64_t max_v = 1;
    for (size_t i = 0; i < n; ++i) {
        max_v = std::max({max_v, cold.phases[i].engine_prefill_tokens, persistent.phases[i].engine_prefill_tokens,
                          persistent.phases[i].reused_tokens});
    }
    const int width = left + static_cast<int>(n) * group_w + 150;
    std::string out;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                  "font-size=\"11\">\n",
                  width, height + top + 40);
    out += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"18\" font-size=\"13\">%s: tokens per phase</text>\n", left,
                  name.c_str());
    out += buf;
    const std::array<const char*, 3> colors = {"#9e9e9e", "#1f77b4", "#2ca02c"};
    const std::array<const char*, 3> labels = {"cold prefill", "persistent prefill", "persistent reused"};
    for (size_t i = 0; i < n; ++i) {
        const std::array<uint64_t, 3> values = {cold.phases[i].engine_prefill_tokens,
                                                persistent.phases[i].engine_prefill_tokens,
                                                persistent.phases[i].reused_tokens};
        for (size_t k = 0; k < 3; ++k) {
            const int h = static_cast<int>(static_cast<double>(values[k]) / static_cast<double>(max_v) * height);
            const int x = left + static_cast<int>(i) * group_w + static_cast<int>(k) * bar_w;
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\"><title>%llu</title></rect>\n",
                          x, top + height - h, bar_w - 2, h, colors[k], static_cast<unsigned long long>(values[k]));
            out += buf;
        }
        std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\">%s</text>\n", left + static_cast<int>(i) * group_w,
                      top + height + 16, persistent.phases[i].name.c_str());
        out += buf;
    }
    for (size_t k = 0; k < 3; ++k) {
        const int y = top + 10 + static_cast<int>(k) * 18;
        const int x = left + static_cast<int>(n) * group_w + 10;
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%d\" y=\"%d\" width=\"12\" height=\"12\" fill=\"%s\"/><text x=\"%d\" y=\"%d\">%s</text>\n",
                      x, y, colors[k], x + 16, y + 10, labels[k]);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%d\">%llu</text>\n", top + 4,
                  static_cast<unsigned long long>(max_v));
    out += buf;
    out += "</svg>\n";
    return out;
}

}  // namespace agentcache
