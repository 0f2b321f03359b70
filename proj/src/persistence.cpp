// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/persistence.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>

#include "agentcache/error.hpp"
#include "agentcache/hash.hpp"

namespace agentcache {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kParts[] = {"K_weights", "K_scales", "K_biases", "V_weights", "V_scales", "V_biases"};

fs::path temp_of(const fs::path& p) { return fs::path(p.string() + ".tmp"); }

void write_durable(const fs::path& path, std::string_view data) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::PersistError, "open " + path.string() + ": " + std::strerror(errno));
    size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            ::close(fd);
            throw Error(ErrorCode::PersistError, "write " + path.string() + ": " + std::strerror(err));
        }
        off += static_cast<size_t>(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        throw Error(ErrorCode::PersistError, "fsync " + path.string() + ": " + std::strerror(errno));
    }
}

void sync_dir(const fs::path& dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

void rename_or_throw(const fs::path& from, const fs::path& to) {
    std::error_code ec;
    fs::rename(from, to, ec);
    if (ec) throw Error(ErrorCode::PersistError, "rename " + from.string() + ": " + ec.message());
}

std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::CorruptFile, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<uint64_t> weights_shape(const QuantizedTensor& q) { return {q.heads, q.tokens, q.words_per_row()}; }
std::vector<uint64_t> scales_shape(const QuantizedTensor& q) { return {q.heads, q.tokens, q.groups_per_row()}; }

void add_tensor(safetensors::Writer& w, uint32_t layer, uint32_t block, char kv, const QuantizedTensor& q) {
    const std::string p(1, kv);
    w.add(block_tensor_name(layer, block, p + "_weights"), "U32", weights_shape(q), safetensors::to_le_bytes(q.packed));
    w.add(block_tensor_name(layer, block, p + "_scales"), "BF16", scales_shape(q), safetensors::to_le_bytes(q.scales));
    w.add(block_tensor_name(layer, block, p + "_biases"), "BF16", scales_shape(q), safetensors::to_le_bytes(q.biases));
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::CorruptFile, what); }

std::span<const uint8_t> tensor_bytes(const std::string& file, const safetensors::Header& h,
                                      const safetensors::TensorEntry& e) {
    return std::span(reinterpret_cast<const uint8_t*>(file.data()) + h.data_start() + e.begin, e.nbytes());
}

QuantizedTensor read_quantized(const std::string& file, const safetensors::Header& h, uint32_t layer, uint32_t block,
                               char kv, uint32_t heads, uint32_t tokens, uint32_t dim, uint32_t group) {
    QuantizedTensor q = QuantizedTensor::empty(heads, dim, group);
    q.tokens = tokens;
    const std::string p(1, kv);
    auto fetch = [&](const std::string& part, std::string_view dtype, const std::vector<uint64_t>& shape) {
        const auto name = block_tensor_name(layer, block, p + part);
        const auto* e = h.find(name);
        if (e == nullptr) corrupt("missing tensor " + name);
        if (e->dtype != dtype || e->shape != shape) corrupt("tensor " + name + " has unexpected dtype or shape");
        return tensor_bytes(file, h, *e);
    };
    q.packed = safetensors::u32_from_le(fetch("_weights", "U32", weights_shape(q)));
    q.scales = safetensors::u16_from_le(fetch("_scales", "BF16", scales_shape(q)));
    q.biases = safetensors::u16_from_le(fetch("_biases", "BF16", scales_shape(q)));
    return q;
}

}  // namespace

bool CacheFilePair::exists() const { return fs::exists(tensor_path) && fs::exists(sidecar_path); }

CacheFilePair cache_paths(const fs::path& dir, std::string_view agent_id) {
    if (agent_id.empty()) throw Error(ErrorCode::InvalidArgument, "agent id must not be empty");
    std::string stem;
    for (unsigned char c : agent_id) {
        if (std::isalnum(c) || c == '_' || c == '-') {
            stem.push_back(static_cast<char>(c));
        } else {
            static constexpr char kHex[] = "0123456789ABCDEF";
            stem += '%';
            stem += kHex[c >> 4];
            stem += kHex[c & 0xf];
        }
    }
    return {dir / (stem + ".safetensors"), dir / (stem + ".meta.json")};
}

std::string block_tensor_name(uint32_t layer, uint32_t block, std::string_view part) {
    return "L" + std::to_string(layer) + "_B" + std::to_string(block) + "_" + std::string(part);
}

CacheFilePair save_agent(const AgentCache& cache, const ModelCacheSpec& spec, const fs::path& dir,
                         const SaveHooks& hooks) {
    const uint64_t fp = spec_fingerprint(spec);
    if (cache.spec_fingerprint != fp) {
        throw Error(ErrorCode::SpecMismatch, "agent '" + cache.agent_id + "' was built for a different spec");
    }
    cache.validate(spec);

    safetensors::Writer writer;
    writer.set_metadata("agent_id", cache.agent_id);
    writer.set_metadata("format", "agentcache-q4");
    writer.set_metadata("format_version", std::to_string(kFormatVersion));
    writer.set_metadata("spec_fingerprint", fingerprint_hex(fp));
    for (const auto& layer : cache.blocks) {
        for (const auto& b : layer) {
            add_tensor(writer, b.layer, b.block_index, 'K', b.k);
            add_tensor(writer, b.layer, b.block_index, 'V', b.v);
        }
    }
    const std::string image = writer.serialize();

    json side{
        {"agent_id", cache.agent_id},
        {"block_token_counts", block_token_counts(cache.blocks)},
        {"char_offsets", cache.char_offsets},
        {"fingerprint", fingerprint_hex(fp)},
        {"format_version", kFormatVersion},
        {"spec", spec.to_json()},
        {"tensor_digest", fingerprint_hex(fnv1a64(image))},
        {"token_ids", cache.token_ids},
        {"transcript_text", cache.transcript_text},
    };
    std::string side_text;
    try {
        side_text = side.dump() + "\n";
    } catch (const json::exception& e) {
        throw Error(ErrorCode::PersistError, std::string("cannot encode sidecar: ") + e.what());
    }

    const auto pair = cache_paths(dir, cache.agent_id);
    const auto tensor_tmp = temp_of(pair.tensor_path);
    const auto side_tmp = temp_of(pair.sidecar_path);
    try {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw Error(ErrorCode::PersistError, "create " + dir.string() + ": " + ec.message());
        recover_pending(pair);
        // Tensor temp first: a lone sidecar temp then always means the tensor was committed.
        write_durable(tensor_tmp, image);
        write_durable(side_tmp, side_text);
    } catch (const Error&) {
        std::error_code ignore;
        fs::remove(tensor_tmp, ignore);
        fs::remove(side_tmp, ignore);
        throw;
    }
    if (hooks.on_stage) hooks.on_stage(SaveStage::TempFilesWritten);
    rename_or_throw(tensor_tmp, pair.tensor_path);
    if (hooks.on_stage) hooks.on_stage(SaveStage::TensorCommitted);
    rename_or_throw(side_tmp, pair.sidecar_path);
    sync_dir(dir);
    return pair;
}

void recover_pending(const CacheFilePair& pair) {
    std::error_code ec;
    const auto tensor_tmp = temp_of(pair.tensor_path);
    const auto side_tmp = temp_of(pair.sidecar_path);
    if (fs::exists(tensor_tmp, ec)) {
        // tensor never committed: the old pair (if any) is intact
        fs::remove(tensor_tmp, ec);
        fs::remove(side_tmp, ec);
    } else if (fs::exists(side_tmp, ec)) {
        // tensor committed, sidecar was durable but not yet renamed
        fs::rename(side_tmp, pair.sidecar_path, ec);
    }
}

bool remove_pair(const CacheFilePair& pair) {
    std::error_code ec;
    bool removed = false;
    for (const auto& p : {pair.tensor_path, pair.sidecar_path, temp_of(pair.tensor_path), temp_of(pair.sidecar_path)}) {
        removed |= fs::remove(p, ec);
    }
    return removed;
}

std::vector<std::string> persisted_agents(const fs::path& dir) {
    constexpr std::string_view kSide = ".meta.json";
    constexpr std::string_view kSideTmp = ".meta.json.tmp";
    std::set<std::string> ids;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        const std::string name = entry.path().filename().string();
        std::string stem;
        if (name.ends_with(kSide)) {
            stem = name.substr(0, name.size() - kSide.size());
        } else if (name.ends_with(kSideTmp)) {
            stem = name.substr(0, name.size() - kSideTmp.size());
            // a pending tensor temp means recovery will roll this save back
            if (fs::exists(dir / (stem + ".safetensors.tmp"), ec)) continue;
        } else {
            continue;
        }
        std::ifstream in(entry.path(), std::ios::binary);
        const json side = json::parse(in, nullptr, false);
        if (side.is_object() && side.contains("agent_id") && side["agent_id"].is_string()) {
            ids.insert(side["agent_id"].get<std::string>());
        }
    }
    return {ids.begin(), ids.end()};
}

AgentCache load_agent(const CacheFilePair& pair, uint64_t expected_fingerprint) {
    recover_pending(pair);
    const bool has_tensor = fs::exists(pair.tensor_path);
    const bool has_side = fs::exists(pair.sidecar_path);
    if (!has_tensor && !has_side) throw Error(ErrorCode::NotFound, "no cache files at " + pair.tensor_path.string());
    if (!has_tensor || !has_side) corrupt("incomplete cache pair at " + pair.tensor_path.string());

    json side;
    try {
        side = json::parse(read_all(pair.sidecar_path));
    } catch (const json::exception& e) {
        corrupt(std::string("sidecar is not valid JSON: ") + e.what());
    }

    AgentCache cache;
    std::vector<uint32_t> counts;
    std::string digest;
    uint64_t fp = 0;
    std::optional<ModelCacheSpec> spec;
    try {
        if (side.at("format_version").get<int>() != kFormatVersion) {
            corrupt("unsupported format_version " + side.at("format_version").dump());
        }
        spec.emplace(ModelCacheSpec::from_json(side.at("spec")));
        fp = parse_fingerprint_hex(side.at("fingerprint").get<std::string>());
        cache.agent_id = side.at("agent_id").get<std::string>();
        cache.transcript_text = side.at("transcript_text").get<std::string>();
        cache.token_ids = side.at("token_ids").get<std::vector<int32_t>>();
        cache.char_offsets = side.at("char_offsets").get<std::vector<uint32_t>>();
        counts = side.at("block_token_counts").get<std::vector<uint32_t>>();
        digest = side.at("tensor_digest").get<std::string>();
    } catch (const json::exception& e) {
        corrupt(std::string("sidecar field missing or mistyped: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptFile) throw;
        corrupt("sidecar invalid: " + e.message());
    }
    if (spec_fingerprint(*spec) != fp) corrupt("sidecar fingerprint does not match its spec");
    if (fp != expected_fingerprint) {
        throw Error(ErrorCode::SpecMismatch, "cache for '" + cache.agent_id + "' was produced by spec " +
                                                 fingerprint_hex(fp) + ", expected " +
                                                 fingerprint_hex(expected_fingerprint));
    }

    const std::string file = read_all(pair.tensor_path);
    if (fingerprint_hex(fnv1a64(file)) != digest) corrupt("tensor file digest does not match sidecar");
    const auto header = safetensors::parse_header(
        std::span(reinterpret_cast<const uint8_t*>(file.data()), file.size()), file.size());
    const auto meta = header.metadata.find("spec_fingerprint");
    if (meta == header.metadata.end() || meta->second != fingerprint_hex(fp)) {
        corrupt("tensor file metadata fingerprint mismatch");
    }
    if (header.tensors.size() != counts.size() * spec->num_layers() * std::size(kParts)) {
        corrupt("tensor file holds " + std::to_string(header.tensors.size()) + " tensors, sidecar declares " +
                std::to_string(counts.size() * spec->num_layers() * std::size(kParts)));
    }

    cache.spec_fingerprint = fp;
    cache.blocks.resize(spec->num_layers());
    for (uint32_t l = 0; l < spec->num_layers(); ++l) {
        for (uint32_t b = 0; b < counts.size(); ++b) {
            KVBlock blk;
            blk.layer = l;
            blk.block_index = b;
            blk.token_count = counts[b];
            blk.k = read_quantized(file, header, l, b, 'K', spec->num_kv_heads(), counts[b], spec->k_head_dim(),
                                   spec->group_size());
            blk.v = read_quantized(file, header, l, b, 'V', spec->num_kv_heads(), counts[b], spec->v_head_dim(),
                                   spec->group_size());
            cache.blocks[l].push_back(std::move(blk));
        }
    }
    try {
        cache.validate(*spec);
    } catch (const Error& e) {
        corrupt("loaded cache is inconsistent: " + e.message());
    }
    cache.state = CacheState::Hot;
    return cache;
}

HeaderSummary inspect(const fs::path& tensor_path) {
    HeaderSummary s;
    s.header = safetensors::read_header(tensor_path);
    s.total_bytes = s.header.total_bytes();
    return s;
}

}  // namespace agentcache
