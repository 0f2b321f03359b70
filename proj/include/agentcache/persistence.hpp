// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "agentcache/agent_cache.hpp"
#include "agentcache/model_spec.hpp"
#include "agentcache/safetensors.hpp"

namespace agentcache {

inline constexpr int kFormatVersion = 1;

/// An agent's tensor file and its JSON sidecar.
struct CacheFilePair {
    std::filesystem::path tensor_path;   // <stem>.safetensors
    std::filesystem::path sidecar_path;  // <stem>.meta.json

    bool exists() const;
};

/// File pair for `agent_id` under `dir`. The stem percent-encodes every byte
/// outside [A-Za-z0-9_-].
CacheFilePair cache_paths(const std::filesystem::path& dir, std::string_view agent_id);

/// Points in the commit protocol, for crash injection in tests.
enum class SaveStage {
    TempFilesWritten,  // both temp files durable, nothing renamed yet
    TensorCommitted,   // tensor file renamed, sidecar still a temp file
};

struct SaveHooks {
    std::function<void(SaveStage)> on_stage;
};

/// Writes the agent's blocks as L{l}_B{b}_{K,V}_{weights,scales,biases}
/// tensors plus the sidecar. Commit is temp-write, then rename tensor, then
/// rename sidecar; recover_pending() completes or discards an interrupted
/// commit so a reader never sees a mixed pair. Throws PersistError.
CacheFilePair save_agent(const AgentCache& cache, const ModelCacheSpec& spec, const std::filesystem::path& dir,
                         const SaveHooks& hooks = {});

/// Loads and fully validates a pair. Throws NotFound when neither file
/// exists, SpecMismatch when the producing spec differs from
/// `expected_fingerprint`, CorruptFile for anything malformed.
AgentCache load_agent(const CacheFilePair& pair, uint64_t expected_fingerprint);

/// Rolls an interrupted save forward or back. Safe to call at any time.
void recover_pending(const CacheFilePair& pair);

/// Removes both files (and any temps). Returns true if anything was removed.
bool remove_pair(const CacheFilePair& pair);

/// Agent ids with a committed (or roll-forward recoverable) pair in dir, sorted.
std::vector<std::string> persisted_agents(const std::filesystem::path& dir);

/// Header-only summary of a tensor file; never reads tensor data.
struct HeaderSummary {
    safetensors::Header header;
    uint64_t total_bytes = 0;
};

HeaderSummary inspect(const std::filesystem::path& tensor_path);

/// Name of block tensor `part` ("K_weights", "V_scales", ...).
std::string block_tensor_name(uint32_t layer, uint32_t block, std::string_view part);

}  // namespace agentcache
