// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/capacity.hpp"

#include <cctype>
#include <cstdio>
#include <limits>

#include "agentcache/error.hpp"
#include "agentcache/quant_codec.hpp"

namespace agentcache {

namespace {

__extension__ using u128 = unsigned __int128;

std::optional<uint64_t> fits(uint64_t budget, uint64_t per_agent) {
    if (per_agent == 0) return std::nullopt;
    return budget / per_agent;
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// floor(number * unit) for a non-negative decimal literal, exactly.
uint64_t scale_decimal(std::string_view number, uint64_t unit, std::string_view original) {
    const auto bad = [&] { return Error(ErrorCode::InvalidValue, "cannot parse size '" + std::string(original) + "'"); };
    if (number.empty()) throw bad();
    const size_t dot = number.find('.');
    const std::string_view whole = number.substr(0, dot);
    const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : number.substr(dot + 1);
    if (whole.empty() && frac.empty()) throw bad();
    u128 w = 0;
    for (char c : whole) {
        if (!std::isdigit(static_cast<unsigned char>(c))) throw bad();
        w = w * 10 + static_cast<unsigned>(c - '0');
        if (w > std::numeric_limits<uint64_t>::max()) throw bad();
    }
    if (frac.size() > 18) throw bad();
    u128 f = 0;
    u128 denom = 1;
    for (char c : frac) {
        if (!std::isdigit(static_cast<unsigned char>(c))) throw bad();
        f = f * 10 + static_cast<unsigned>(c - '0');
        denom *= 10;
    }
    const u128 total = w * unit + f * unit / denom;
    if (total > std::numeric_limits<uint64_t>::max()) throw bad();
    return static_cast<uint64_t>(total);
}

}  // namespace

std::vector<CapacityRow> capacity_table(const ModelCacheSpec& spec, uint64_t budget_bytes,
                                        std::span<const uint64_t> contexts, CapacityOptions options) {
    if (budget_bytes == 0) throw Error(ErrorCode::InvalidArgument, "budget must be positive");
    std::vector<CapacityRow> rows;
    for (uint64_t ctx : contexts) {
        uint64_t n = ctx;
        if (options.block_rounded) n = (ctx + spec.block_tokens() - 1) / spec.block_tokens() * spec.block_tokens();
        CapacityRow row;
        row.context_tokens = ctx;
        row.fp16_bytes_per_agent = fp16_bytes(spec, n);
        row.q4_bytes_per_agent = q4_bytes(spec, n);
        row.fp16_agents_fit = fits(budget_bytes, row.fp16_bytes_per_agent);
        row.q4_agents_fit = fits(budget_bytes, row.q4_bytes_per_agent);
        rows.push_back(row);
    }
    return rows;
}

uint64_t parse_byte_size(std::string_view text) {
    const std::string_view t = trim(text);
    size_t split = 0;
    while (split < t.size() && (std::isdigit(static_cast<unsigned char>(t[split])) || t[split] == '.')) ++split;
    const std::string unit = upper(trim(t.substr(split)));
    uint64_t mult = 0;
    if (unit.empty() || unit == "B") {
        mult = 1;
    } else if (unit == "KB" || unit == "KIB" || unit == "K") {
        mult = 1ull << 10;
    } else if (unit == "MB" || unit == "MIB" || unit == "M") {
        mult = 1ull << 20;
    } else if (unit == "GB" || unit == "GIB" || unit == "G") {
        mult = 1ull << 30;
    } else if (unit == "TB" || unit == "TIB" || unit == "T") {
        mult = 1ull << 40;
    } else {
        throw Error(ErrorCode::InvalidValue, "unknown size unit in '" + std::string(text) + "'");
    }
    return scale_decimal(t.substr(0, split), mult, text);
}

uint64_t parse_context(std::string_view text) {
    const std::string_view t = trim(text);
    if (t.empty()) throw Error(ErrorCode::InvalidValue, "empty context length");
    uint64_t mult = 1;
    std::string_view digits = t;
    if (t.back() == 'k' || t.back() == 'K') {
        mult = 1024;
        digits.remove_suffix(1);
    }
    if (digits.empty() || digits.find('.') != std::string_view::npos) {
        throw Error(ErrorCode::InvalidValue, "cannot parse context length '" + std::string(text) + "'");
    }
    return scale_decimal(digits, mult, text);
}

std::vector<uint64_t> parse_context_list(std::string_view csv) {
    std::vector<uint64_t> out;
    while (!csv.empty()) {
        const size_t comma = csv.find(',');
        out.push_back(parse_context(csv.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        csv.remove_prefix(comma + 1);
    }
    if (out.empty()) throw Error(ErrorCode::InvalidValue, "no context lengths given");
    return out;
}

std::string format_context(uint64_t tokens) {
    if (tokens != 0 && tokens % 1024 == 0) return std::to_string(tokens / 1024) + "K";
    return std::to_string(tokens);
}

std::string format_gb(uint64_t bytes) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(bytes) / static_cast<double>(1ull << 30));
    return buf;
}

std::string format_mb(uint64_t bytes) {
    char buf[32];
    if (bytes % (1ull << 20) == 0) return std::to_string(bytes >> 20);
    std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(bytes) / static_cast<double>(1ull << 20));
    return buf;
}

std::string format_fit(const std::optional<uint64_t>& fit) { return fit ? std::to_string(*fit) : "∞"; }

nlohmann::json capacity_json(const ModelCacheSpec& spec, uint64_t budget_bytes, const std::vector<CapacityRow>& rows) {
    nlohmann::json j{{"model", spec.model_id()}, {"budget_bytes", budget_bytes}, {"rows", nlohmann::json::array()}};
    const auto fit_json = [](const std::optional<uint64_t>& f) { return f ? nlohmann::json(*f) : nlohmann::json("∞"); };
    for (const auto& r : rows) {
        j["rows"].push_back({{"context_tokens", r.context_tokens},
                             {"fp16_bytes_per_agent", r.fp16_bytes_per_agent},
                             {"q4_bytes_per_agent", r.q4_bytes_per_agent},
                             {"fp16_agents_fit", fit_json(r.fp16_agents_fit)},
                             {"q4_agents_fit", fit_json(r.q4_agents_fit)}});
    }
    return j;
}

std::string capacity_text(const std::vector<CapacityRow>& rows) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %12s %12s %10s %10s\n", "Context", "FP16/agent", "Q4/agent", "FP16 fits",
                  "Q4 fits");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-8s %9s GB %9s GB %10s %10s\n", format_context(r.context_tokens).c_str(),
                      format_gb(r.fp16_bytes_per_agent).c_str(), format_gb(r.q4_bytes_per_agent).c_str(),
                      format_fit(r.fp16_agents_fit).c_str(), format_fit(r.q4_agents_fit).c_str());
        out += buf;
    }
    return out;
}

std::string capacity_tsv(const std::vector<CapacityRow>& rows) {
    std::string out = "context_tokens\tfp16_bytes_per_agent\tq4_bytes_per_agent\tfp16_agents_fit\tq4_agents_fit\n";
    for (const auto& r : rows) {
        out += std::to_string(r.context_tokens) + '\t' + std::to_string(r.fp16_bytes_per_agent) + '\t' +
               std::to_string(r.q4_bytes_per_agent) + '\t' + format_fit(r.fp16_agents_fit) + '\t' +
               format_fit(r.q4_agents_fit) + '\n';
    }
    return out;
}

}  // namespace agentcache
