// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//
// agentcache command line tool. Exit codes: 0 success, 1 runtime error
// (message on stderr, prefixed with the error code), 2 usage error.

#include <chrono>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agentcache/capacity.hpp"
#include "agentcache/config.hpp"
#include "agentcache/daemon.hpp"
#include "agentcache/engine.hpp"
#include "agentcache/error.hpp"
#include "agentcache/persistence.hpp"
#include "agentcache/quant_codec.hpp"
#include "agentcache/scenario.hpp"

using namespace agentcache;
using nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << content)) throw Error(ErrorCode::PersistError, "cannot write " + path);
}

int cmd_capacity(const std::string& model, const std::string& budget, const std::string& contexts,
                 const std::string& format, bool block_rounded) {
    const ModelCacheSpec spec = resolve_spec(model);
    const uint64_t budget_bytes = parse_byte_size(budget);
    const auto ctx = parse_context_list(contexts);
    CapacityOptions opts;
    opts.block_rounded = block_rounded;
    const auto rows = capacity_table(spec, budget_bytes, ctx, opts);
    if (format == "json") {
        std::cout << capacity_json(spec, budget_bytes, rows).dump(2) << "\n";
    } else if (format == "tsv") {
        std::cout << capacity_tsv(rows);
    } else {
        std::cout << spec.model_id() << ", budget " << budget << " (" << budget_bytes << " bytes)\n"
                  << capacity_text(rows);
    }
    return 0;
}

int cmd_inspect(const std::string& path, bool as_json) {
    const HeaderSummary s = inspect(path);
    json j{{"file", path},
           {"header_bytes", s.header.header_bytes},
           {"data_bytes", s.header.data_bytes},
           {"total_bytes", s.total_bytes},
           {"metadata", s.header.metadata},
           {"tensors", json::array()}};
    for (const auto& t : s.header.tensors) {
        j["tensors"].push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"bytes", t.nbytes()}});
    }
    if (as_json) {
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << path << ": " << s.header.tensors.size() << " tensors, " << s.total_bytes << " bytes\n";
    for (const auto& [k, v] : s.header.metadata) std::cout << "  " << k << " = " << v << "\n";
    for (const auto& t : s.header.tensors) {
        std::cout << "  " << t.name << " " << t.dtype << " [";
        for (size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? ", " : "") << t.shape[i];
        std::cout << "] " << t.nbytes() << " B\n";
    }
    return 0;
}

int cmd_client(const std::string& endpoint, const std::string& op, const std::string& params, bool wait_done) {
    Client client(endpoint);
    const json p = params.empty() ? json::object() : json::parse(params);
    const json resp = client.call(op, p);
    std::cout << resp.dump() << std::endl;
    if (wait_done && op == "submit" && resp.value("ok", false)) {
        const std::string rid = resp["result"]["request_id"];
        bool done = false;
        for (const auto& e : client.events()) {
            std::cout << e.dump() << "\n";
            done |= e["event"]["kind"] == "Done";
        }
        while (!done) {
            const std::string line = client.read_line();
            if (line.empty()) break;
            std::cout << line << std::endl;
            const json e = json::parse(line);
            done = e.contains("event") && e["request_id"] == rid && e["event"]["kind"] == "Done";
        }
    } else {
        for (const auto& e : client.events()) std::cout << e.dump() << "\n";
    }
    return resp.value("ok", false) ? 0 : 1;
}

int cmd_scenario(const std::string& name, const ScenarioOptions& opts, const std::string& trace,
                 const std::string& plot, bool as_json) {
    const ScenarioReport report = run_scenario(name, opts);
    if (!trace.empty()) write_file(trace, report.trace_jsonl());
    if (!plot.empty()) write_file(plot, report.svg());
    if (as_json) {
        std::cout << report.to_json().dump(2) << "\n";
    } else {
        std::cout << report.table();
    }
    return 0;
}

int cmd_bench(size_t groups, uint32_t group_size, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    Tensor t({1, groups, group_size});
    for (auto& v : t.data()) v = dist(rng);
    const auto t0 = std::chrono::steady_clock::now();
    const QuantizedTensor q = quantize_tensor(t, group_size);
    const auto t1 = std::chrono::steady_clock::now();
    const Tensor back = dequantize_tensor(q);
    const auto t2 = std::chrono::steady_clock::now();
    double max_err = 0.0;
    for (size_t i = 0; i < t.size(); ++i) {
        max_err = std::max(max_err, static_cast<double>(std::abs(t.data()[i] - back.data()[i])));
    }
    const auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    const double elems = static_cast<double>(t.size());
    std::cout << json{{"groups", groups},
                      {"group_size", group_size},
                      {"quantize_melem_per_s", elems / secs(t0, t1) / 1e6},
                      {"dequantize_melem_per_s", elems / secs(t1, t2) / 1e6},
                      {"max_abs_error", max_err},
                      {"q4_bytes", q.byte_size()},
                      {"fp16_bytes", t.size() * 2}}
                     .dump(2)
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"agentcache: persistent quantized KV cache for multi-agent inference"};
    app.require_subcommand(1);

    std::string model = "gemma3-12b";
    std::string budget = "10.2GB";
    std::string contexts = "4k,8k,16k,32k";
    std::string format = "text";
    bool block_rounded = false;
    auto* cap = app.add_subcommand("capacity", "Per-agent cache sizes and how many agents fit a budget");
    cap->add_option("--model", model, "Preset name")->capture_default_str();
    cap->add_option("--budget", budget, "Cache budget, e.g. 10.2GB (binary units)")->capture_default_str();
    cap->add_option("--contexts", contexts, "Comma-separated context lengths")->capture_default_str();
    cap->add_option("--format", format, "text, json or tsv")->check(CLI::IsMember({"text", "json", "tsv"}));
    cap->add_flag("--block-rounded", block_rounded, "Round contexts up to whole blocks");

    std::string inspect_path;
    bool inspect_json = false;
    auto* insp = app.add_subcommand("inspect", "Print the header of a persisted cache file");
    insp->add_option("file", inspect_path, "Path to a .safetensors file")->required();
    insp->add_flag("--json", inspect_json, "Print the header as JSON");

    std::string config_path;
    ServiceConfig svc;
    auto* serve_cmd = app.add_subcommand("serve", "Run the cache daemon");
    serve_cmd->add_option("--config", config_path, "key=value config file");
    std::string socket_opt, cache_dir_opt, model_opt, budget_opt;
    uint16_t port_opt = 0;
    uint32_t chunk_opt = 0, batch_opt = 0;
    serve_cmd->add_option("--socket", socket_opt, std::string("Unix socket path (default $") + kSocketEnv + ")");
    serve_cmd->add_option("--port", port_opt, "TCP port on 127.0.0.1 when no socket is given (0 = any)");
    serve_cmd->add_option("--cache-dir", cache_dir_opt, "Directory for persisted caches");
    serve_cmd->add_option("--model", model_opt, "tiny or a preset name");
    serve_cmd->add_option("--budget", budget_opt, "Resident cache budget, e.g. 2G");
    serve_cmd->add_option("--chunk", chunk_opt, "Prefill chunk size in tokens");
    serve_cmd->add_option("--max-batch", batch_opt, "Decode batch rows");

    std::string endpoint, op = "stats", params;
    bool wait_done = false;
    auto* client_cmd = app.add_subcommand("client", "Send one request to a running daemon");
    client_cmd->add_option("--endpoint", endpoint, "unix:<path>, tcp:<host>:<port> or a socket path");
    client_cmd->add_option("--op", op, "Operation name")->capture_default_str();
    client_cmd->add_option("--params", params, "JSON object");
    client_cmd->add_flag("--wait", wait_done, "After submit, print events until Done");

    std::string scenario_name, trace_path, plot_path;
    bool scenario_json = false, cooldown = false;
    ScenarioOptions sopts;
    std::string sbudget;
    auto* scen = app.add_subcommand("scenario", "Run a scripted multi-agent scenario cold and persistent");
    scen->add_option("name", scenario_name)->required()->check(CLI::IsMember(scenario_names()));
    scen->add_option("--seed", sopts.seed)->capture_default_str();
    scen->add_option("--model", sopts.model)->capture_default_str();
    scen->add_option("--chunk", sopts.chunk_tokens)->capture_default_str();
    scen->add_option("--max-batch", sopts.max_batch)->capture_default_str();
    scen->add_option("--budget", sbudget, "Pool budget (default 4MB)");
    scen->add_option("--trace", trace_path, "Write the event trace as JSON lines");
    scen->add_option("--plot", plot_path, "Write an SVG bar chart");
    scen->add_flag("--json", scenario_json, "Print the report as JSON");
    scen->add_flag("--cooldown", cooldown, "Accepted for compatibility; does nothing");

    size_t bench_groups = 1 << 16;
    uint32_t bench_group = 64;
    uint64_t bench_seed = 7;
    auto* bench = app.add_subcommand("bench", "Q4 codec throughput and error");
    bench->add_option("--groups", bench_groups, "Random groups to encode")->capture_default_str();
    bench->add_option("--group-size", bench_group)->capture_default_str();
    bench->add_option("--seed", bench_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*cap) return cmd_capacity(model, budget, contexts, format, block_rounded);
        if (*insp) return cmd_inspect(inspect_path, inspect_json);
        if (*serve_cmd) {
            if (!config_path.empty()) svc = load_config(config_path);
            if (!socket_opt.empty()) svc.socket_path = socket_opt;
            if (port_opt != 0) svc.tcp_port = port_opt;
            if (!cache_dir_opt.empty()) svc.cache_dir = cache_dir_opt;
            if (!model_opt.empty()) svc.model = model_opt;
            if (!budget_opt.empty()) svc.budget_bytes = parse_byte_size(budget_opt);
            if (chunk_opt != 0) svc.chunk_tokens = chunk_opt;
            if (batch_opt != 0) svc.max_batch = batch_opt;
            apply_env(svc);
            return serve(svc);
        }
        if (*client_cmd) {
            if (endpoint.empty()) {
                ServiceConfig env;
                apply_env(env);
                if (env.socket_path.empty()) {
                    std::cerr << "usage: client needs --endpoint or $" << kSocketEnv << "\n";
                    return 2;
                }
                endpoint = env.socket_path;
            }
            return cmd_client(endpoint, op, params, wait_done);
        }
        if (*scen) {
            if (!sbudget.empty()) sopts.budget_bytes = parse_byte_size(sbudget);
            return cmd_scenario(scenario_name, sopts, trace_path, plot_path, scenario_json);
        }
        if (*bench) return cmd_bench(bench_groups, bench_group, bench_seed);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
