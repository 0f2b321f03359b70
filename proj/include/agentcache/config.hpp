// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace agentcache {

inline constexpr const char* kSocketEnv = "AGENTCACHE_SOCKET";

/// Settings shared by the daemon and the CLI scenarios.
struct ServiceConfig {
    std::string model = "tiny";
    uint64_t budget_bytes = 1ull << 30;
    uint32_t chunk_tokens = 512;
    uint32_t max_batch = 2;
    std::filesystem::path cache_dir = "agentcache-data";
    std::string socket_path;  // empty: use tcp_port
    uint16_t tcp_port = 0;
    bool auto_run = true;     // daemon drives the scheduler between requests
};

/// key = value lines; '#' starts a comment. Keys: model, budget, chunk_tokens,
/// max_batch, cache_dir, socket, tcp_port, auto_run. Unknown keys and bad
/// values throw InvalidValue naming the line.
ServiceConfig parse_config(std::string_view text, ServiceConfig base = {});

ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base = {});

/// Fills socket_path from $AGENTCACHE_SOCKET when it is unset.
void apply_env(ServiceConfig& config);

}  // namespace agentcache
