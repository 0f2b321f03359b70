// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentcache/prefix_matcher.hpp"
#include "agentcache/scheduler.hpp"

namespace agentcache {

struct ScenarioOptions {
    uint64_t seed = 1;
    std::string model = "tiny";
    uint32_t chunk_tokens = kDefaultChunkTokens;
    uint32_t max_batch = kDefaultMaxBatch;
    uint64_t budget_bytes = 4ull << 20;
    /// Scratch space for persisted caches; a fresh temp dir when empty.
    std::filesystem::path cache_dir;
};

/// One agent turn in a phase. The prompt is the agent's transcript so far
/// (for permanent agents) followed by new_text.
struct ScenarioTurn {
    std::string agent;
    std::string new_text;
    uint32_t max_tokens = 8;
    bool permanent = true;
    /// Submitted after this many scheduler steps of the phase.
    uint32_t submit_after_steps = 0;
};

struct ScenarioPhase {
    std::string name;
    std::vector<ScenarioTurn> turns;
};

struct TurnResult {
    std::string agent;
    std::string request_id;
    Verdict verdict = Verdict::Diverge;
    uint64_t prompt_tokens = 0;
    uint64_t reused_tokens = 0;
    uint64_t prefilled_tokens = 0;
    uint64_t generated = 0;
    bool ok = true;
};

struct PhaseResult {
    std::string name;
    std::vector<TurnResult> turns;
    uint64_t engine_prefill_tokens = 0;
    uint64_t reused_tokens = 0;
    uint64_t evictions = 0;
    uint64_t reloads = 0;
    /// Agent of each prefill chunk, and "+"-joined agents of each decode batch, in order.
    std::vector<std::string> work_order;
};

struct ModeResult {
    std::string mode;  // "cold" or "persistent"
    std::vector<PhaseResult> phases;
    std::vector<nlohmann::json> trace;  // events tagged with mode and phase
};

struct ScenarioReport {
    std::string name;
    uint64_t seed = 0;
    ModeResult cold;
    ModeResult persistent;

    nlohmann::json to_json() const;
    std::string table() const;
    std::string trace_jsonl() const;
    /// Grouped bar chart of reused vs prefilled tokens per phase.
    std::string svg() const;
};

std::vector<std::string> scenario_names();

/// Scripted phases for a named scenario. Throws InvalidArgument for unknown names.
std::vector<ScenarioPhase> build_scenario(std::string_view name, uint64_t seed);

/// Runs the phases twice: with every cache cleared before each turn, and with
/// caches persisted (saved, dropped from memory and reloaded) across phases.
ScenarioReport run_scenario(std::string_view name, const ScenarioOptions& options);

ModeResult run_phases(const std::vector<ScenarioPhase>& phases, bool persistent, const ScenarioOptions& options);

/// Deterministic filler text of `words` words.
std::string scenario_text(uint64_t seed, uint64_t stream, size_t words);

}  // namespace agentcache
