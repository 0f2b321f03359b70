// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Structured results cross the boundary as JSON text and
// are decoded by the pure-Python wrapper in agentcache/__init__.py.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "agentcache/capacity.hpp"
#include "agentcache/engine.hpp"
#include "agentcache/error.hpp"
#include "agentcache/persistence.hpp"
#include "agentcache/prefix_matcher.hpp"
#include "agentcache/quant_codec.hpp"
#include "agentcache/scenario.hpp"
#include "agentcache/scheduler.hpp"

namespace py = pybind11;
using namespace agentcache;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    if (a.ndim() != 3) throw Error(ErrorCode::ShapeError, "expected a (heads, tokens, dim) array");
    std::vector<size_t> shape(a.shape(), a.shape() + 3);
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict quantize(const FloatArray& values, uint32_t group_size) {
    const QuantizedTensor q = quantize_tensor(to_tensor(values), group_size);
    const std::vector<py::ssize_t> words{q.heads, q.tokens, q.words_per_row()};
    const std::vector<py::ssize_t> groups{q.heads, q.tokens, q.groups_per_row()};
    py::dict d;
    d["packed"] = py::array_t<uint32_t>(words, q.packed.data());
    d["scales"] = py::array_t<uint16_t>(groups, q.scales.data());
    d["biases"] = py::array_t<uint16_t>(groups, q.biases.data());
    d["group_size"] = group_size;
    return d;
}

py::array_t<float> dequantize(const py::array_t<uint32_t, py::array::c_style | py::array::forcecast>& packed,
                              const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>& scales,
                              const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>& biases,
                              uint32_t group_size) {
    if (packed.ndim() != 3 || scales.ndim() != 3 || biases.ndim() != 3) {
        throw Error(ErrorCode::ShapeError, "packed, scales and biases must be 3-D");
    }
    QuantizedTensor q;
    q.heads = static_cast<uint32_t>(packed.shape(0));
    q.tokens = static_cast<uint32_t>(packed.shape(1));
    q.dim = static_cast<uint32_t>(packed.shape(2) * 8);
    q.group_size = group_size;
    q.packed.assign(packed.data(), packed.data() + packed.size());
    q.scales.assign(scales.data(), scales.data() + scales.size());
    q.biases.assign(biases.data(), biases.data() + biases.size());
    q.validate();
    const Tensor t = dequantize_tensor(q);
    const std::vector<py::ssize_t> shape{q.heads, q.tokens, q.dim};
    return py::array_t<float>(shape, t.data().data());
}

uint64_t budget_bytes(const py::object& budget) {
    if (py::isinstance<py::int_>(budget)) return budget.cast<uint64_t>();
    return parse_byte_size(budget.cast<std::string>());
}

std::string capacity(const std::string& model, const py::object& budget, const std::vector<uint64_t>& contexts,
                     bool block_rounded) {
    const ModelCacheSpec spec = resolve_spec(model);
    const uint64_t b = budget_bytes(budget);
    return capacity_json(spec, b, capacity_table(spec, b, contexts, CapacityOptions{block_rounded})).dump();
}

std::string inspect_file(const std::filesystem::path& path) {
    const auto s = inspect(path);
    nlohmann::json j{{"total_bytes", s.total_bytes}, {"metadata", s.header.metadata}, {"tensors", nlohmann::json::array()}};
    for (const auto& t : s.header.tensors) {
        j["tensors"].push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"bytes", t.nbytes()}});
    }
    return j.dump();
}

std::string events_json(const std::vector<Event>& events) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : events) a.push_back(e.to_json());
    return a.dump();
}

// Engine, pool and scheduler owned together.
class Runtime {
public:
    Runtime(const std::string& model, const py::object& budget, const std::filesystem::path& cache_dir,
            uint32_t chunk_tokens, uint32_t max_batch)
        : engine_(resolve_spec(model)),
          pool_(engine_.spec(), PoolConfig{budget_bytes(budget), cache_dir}),
          scheduler_(engine_, pool_, SchedulerConfig{chunk_tokens, max_batch}) {}

    void submit(const std::string& request_id, const std::string& agent, const std::string& prompt,
                uint32_t max_tokens, bool persistent) {
        scheduler_.submit(Request{request_id, agent, prompt, max_tokens, persistent});
    }
    std::string step() { return events_json(scheduler_.step()); }
    std::string run() {
        py::gil_scoped_release release;
        return events_json(scheduler_.run_until_idle());
    }
    bool idle() const { return scheduler_.idle(); }
    std::string save_all() { return events_json(scheduler_.save_all()); }
    std::string restore(const std::vector<std::string>& agents) {
        return events_json(scheduler_.restore(agents.empty() ? persisted_agents(pool_.config().cache_dir) : agents));
    }
    void drop(const std::string& agent, bool delete_disk) { scheduler_.drop(agent, delete_disk); }
    std::string match(const std::string& agent, const std::string& prompt) {
        return scheduler_.match(agent, prompt).to_json().dump();
    }
    std::string transcript(const std::string& agent) { return pool_.get_cache(agent).transcript_text; }
    std::string stats() const {
        const PoolStats s = pool_.stats();
        const EngineCounters e = engine_.counters();
        return nlohmann::json{{"resident_bytes", s.resident_bytes}, {"budget_bytes", s.budget_bytes},
                              {"agents_hot", s.agents_hot},         {"agents_warm", s.agents_warm},
                              {"evictions", s.evictions},           {"reloads", s.reloads},
                              {"tokens_prefilled", e.tokens_prefilled}, {"decode_steps", e.decode_steps}}
            .dump();
    }

private:
    SyntheticEngine engine_;
    BlockPool pool_;
    Scheduler scheduler_;
};

}  // namespace

PYBIND11_MODULE(_agentcache, m) {
    m.doc() = "Native core of agentcache";

    py::register_exception<Error>(m, "AgentCacheError");

    m.def("preset_names", &preset_names);
    m.def("spec_json", [](const std::string& name) { return resolve_spec(name).to_json().dump(); }, py::arg("model"));
    m.def("spec_fingerprint", [](const std::string& name) { return fingerprint_hex(spec_fingerprint(resolve_spec(name))); },
          py::arg("model"));
    m.def("fp16_bytes", [](const std::string& model, uint64_t tokens) { return fp16_bytes(resolve_spec(model), tokens); },
          py::arg("model"), py::arg("tokens"));
    m.def("q4_bytes", [](const std::string& model, uint64_t tokens) { return q4_bytes(resolve_spec(model), tokens); },
          py::arg("model"), py::arg("tokens"));
    m.def("memory_ratio", &memory_ratio, py::arg("group_size") = 64);
    m.def("parse_byte_size", &parse_byte_size, py::arg("text"));
    m.def("capacity_json", &capacity, py::arg("model"), py::arg("budget"), py::arg("contexts"),
          py::arg("block_rounded") = false);
    m.def("quantize", &quantize, py::arg("values"), py::arg("group_size") = 64);
    m.def("dequantize", &dequantize, py::arg("packed"), py::arg("scales"), py::arg("biases"),
          py::arg("group_size") = 64);
    m.def(
        "match_json",
        [](const std::string& transcript, const std::vector<uint32_t>& offsets, const std::string& prompt,
           uint32_t block_tokens) { return match(transcript, offsets, prompt, block_tokens).to_json().dump(); },
        py::arg("transcript"), py::arg("char_offsets"), py::arg("prompt"), py::arg("block_tokens"));
    m.def("inspect_json", &inspect_file, py::arg("path"));
    m.def(
        "scenario_json",
        [](const std::string& name, uint64_t seed, const std::string& model, uint32_t chunk_tokens) {
            ScenarioOptions o;
            o.seed = seed;
            o.model = model;
            o.chunk_tokens = chunk_tokens;
            py::gil_scoped_release release;
            return run_scenario(name, o).to_json().dump();
        },
        py::arg("name"), py::arg("seed") = 1, py::arg("model") = "tiny", py::arg("chunk_tokens") = kDefaultChunkTokens);

    py::class_<Runtime>(m, "Runtime")
        .def(py::init<const std::string&, const py::object&, const std::filesystem::path&, uint32_t, uint32_t>(),
             py::arg("model") = "tiny", py::arg("budget") = py::str("1G"), py::arg("cache_dir") = "",
             py::arg("chunk_tokens") = kDefaultChunkTokens, py::arg("max_batch") = kDefaultMaxBatch)
        .def("submit", &Runtime::submit, py::arg("request_id"), py::arg("agent"), py::arg("prompt"),
             py::arg("max_tokens") = 1, py::arg("persistent") = true)
        .def("step_json", &Runtime::step)
        .def("run_json", &Runtime::run)
        .def("idle", &Runtime::idle)
        .def("save_all_json", &Runtime::save_all)
        .def("restore_json", &Runtime::restore, py::arg("agents") = std::vector<std::string>{})
        .def("drop", &Runtime::drop, py::arg("agent"), py::arg("delete_disk") = false)
        .def("match_json", &Runtime::match, py::arg("agent"), py::arg("prompt"))
        .def("transcript", &Runtime::transcript, py::arg("agent"))
        .def("stats_json", &Runtime::stats);
}
