// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "agentcache/capacity.hpp"
#include "agentcache/error.hpp"

namespace agentcache {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_uint(std::string_view v, const std::string& where) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw Error(ErrorCode::InvalidValue, where + ": expected an unsigned integer, got '" + std::string(v) + "'");
    }
    return out;
}

template <typename T>
T parse_positive(std::string_view v, const std::string& where) {
    const T out = parse_uint<T>(v, where);
    if (out == 0) throw Error(ErrorCode::InvalidValue, where + ": must be at least 1");
    return out;
}

bool parse_bool(std::string_view v, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(ErrorCode::InvalidValue, where + ": expected a boolean, got '" + std::string(v) + "'");
}

}  // namespace

ServiceConfig parse_config(std::string_view text, ServiceConfig base) {
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = raw;
        if (const size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = "config line " + std::to_string(lineno);
        const size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw Error(ErrorCode::InvalidValue, where + ": expected key = value");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key == "model") {
            base.model = std::string(value);
        } else if (key == "budget") {
            base.budget_bytes = parse_byte_size(value);
        } else if (key == "chunk_tokens") {
            base.chunk_tokens = parse_positive<uint32_t>(value, where);
        } else if (key == "max_batch") {
            base.max_batch = parse_positive<uint32_t>(value, where);
        } else if (key == "cache_dir") {
            base.cache_dir = std::string(value);
        } else if (key == "socket") {
            base.socket_path = std::string(value);
        } else if (key == "tcp_port") {
            base.tcp_port = parse_uint<uint16_t>(value, where);
        } else if (key == "auto_run") {
            base.auto_run = parse_bool(value, where);
        } else {
            throw Error(ErrorCode::InvalidValue, where + ": unknown key '" + std::string(key) + "'");
        }
    }
    return base;
}

ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::NotFound, "cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

void apply_env(ServiceConfig& config) {
    if (!config.socket_path.empty()) return;
    if (const char* env = std::getenv(kSocketEnv); env != nullptr && *env != '\0') config.socket_path = env;
}

}  // namespace agentcache
