// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/safetensors.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "agentcache/error.hpp"

namespace agentcache::safetensors {

using nlohmann::json;

namespace {

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::CorruptFile, what); }

uint64_t read_u64_le(std::span<const uint8_t> b) {
    uint64_t v = 0;
    for (size_t i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

size_t dtype_size(std::string_view dtype) noexcept {
    if (dtype == "BOOL" || dtype == "U8" || dtype == "I8" || dtype == "F8_E4M3" || dtype == "F8_E5M2") return 1;
    if (dtype == "U16" || dtype == "I16" || dtype == "F16" || dtype == "BF16") return 2;
    if (dtype == "U32" || dtype == "I32" || dtype == "F32") return 4;
    if (dtype == "U64" || dtype == "I64" || dtype == "F64") return 8;
    return 0;
}

const TensorEntry* Header::find(std::string_view name) const noexcept {
    auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                               [](const TensorEntry& e, std::string_view n) { return e.name < n; });
    return it != tensors.end() && it->name == name ? &*it : nullptr;
}

void Writer::add(std::string name, std::string dtype, std::vector<uint64_t> shape, std::vector<uint8_t> bytes) {
    tensors_[std::move(name)] = Pending{std::move(dtype), std::move(shape), std::move(bytes)};
}

void Writer::set_metadata(std::string key, std::string value) { metadata_[std::move(key)] = std::move(value); }

std::string Writer::serialize() const {
    json header = json::object();
    if (!metadata_.empty()) header["__metadata__"] = metadata_;
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        header[name] = json{{"dtype", t.dtype}, {"shape", t.shape}, {"data_offsets", {offset, offset + t.bytes.size()}}};
        offset += t.bytes.size();
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::string out;
    out.reserve(8 + text.size() + offset);
    const uint64_t n = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xffu));
    out += text;
    for (const auto& [name, t] : tensors_) out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
    return out;
}

Header parse_header(std::span<const uint8_t> prefix, uint64_t file_size) {
    if (prefix.size() < 8 || file_size < 8) corrupt("file shorter than the 8-byte header length");
    Header h;
    h.header_bytes = read_u64_le(prefix);
    if (h.header_bytes < 2 || h.header_bytes > kMaxHeaderBytes) corrupt("implausible header length");
    if (h.header_bytes > file_size - 8 || h.header_bytes > prefix.size() - 8) corrupt("header extends past end of file");

    json j;
    try {
        const auto* p = reinterpret_cast<const char*>(prefix.data() + 8);
        j = json::parse(p, p + h.header_bytes);
    } catch (const json::exception& e) {
        corrupt(std::string("header is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) corrupt("header is not a JSON object");

    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "__metadata__") {
            if (!it->is_object()) corrupt("__metadata__ is not an object");
            for (auto m = it->begin(); m != it->end(); ++m) {
                if (!m->is_string()) corrupt("__metadata__ values must be strings");
                h.metadata[m.key()] = m->get<std::string>();
            }
            continue;
        }
        const json& t = *it;
        TensorEntry e;
        e.name = it.key();
        try {
            e.dtype = t.at("dtype").get<std::string>();
            e.shape = t.at("shape").get<std::vector<uint64_t>>();
            const auto off = t.at("data_offsets").get<std::vector<uint64_t>>();
            if (off.size() != 2) corrupt("tensor '" + e.name + "' data_offsets must have two entries");
            e.begin = off[0];
            e.end = off[1];
        } catch (const json::exception& ex) {
            corrupt("tensor '" + e.name + "' entry malformed: " + ex.what());
        }
        const size_t es = dtype_size(e.dtype);
        if (es == 0) corrupt("tensor '" + e.name + "' has unknown dtype " + e.dtype);
        if (e.end < e.begin) corrupt("tensor '" + e.name + "' has inverted offsets");
        uint64_t elems = 1;
        for (uint64_t d : e.shape) {
            if (d != 0 && elems > UINT64_MAX / d) corrupt("tensor '" + e.name + "' shape overflows");
            elems *= d;
        }
        if (elems > UINT64_MAX / es || elems * es != e.nbytes()) {
            corrupt("tensor '" + e.name + "' byte range does not match dtype and shape");
        }
        h.tensors.push_back(std::move(e));
    }

    // data section must be covered exactly, without gaps or overlap
    std::vector<const TensorEntry*> by_offset;
    for (const auto& e : h.tensors) by_offset.push_back(&e);
    std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    uint64_t cursor = 0;
    for (const auto* e : by_offset) {
        if (e->begin != cursor) corrupt("tensor '" + e->name + "' leaves a gap or overlaps");
        cursor = e->end;
    }
    h.data_bytes = cursor;
    std::sort(h.tensors.begin(), h.tensors.end(), [](const auto& a, const auto& b) { return a.name < b.name; });

    if (file_size != h.total_bytes()) {
        corrupt("file is " + std::to_string(file_size) + " bytes, header declares " + std::to_string(h.total_bytes()));
    }
    return h;
}

Header read_header(const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) corrupt("cannot stat " + path.string() + ": " + ec.message());
    std::ifstream in(path, std::ios::binary);
    if (!in) corrupt("cannot open " + path.string());
    std::vector<uint8_t> prefix(8);
    if (size < 8 || !in.read(reinterpret_cast<char*>(prefix.data()), 8)) corrupt("file shorter than 8 bytes");
    const uint64_t n = read_u64_le(prefix);
    if (n < 2 || n > kMaxHeaderBytes || n > size - 8) corrupt("implausible header length");
    prefix.resize(8 + n);
    if (!in.read(reinterpret_cast<char*>(prefix.data() + 8), static_cast<std::streamsize>(n))) {
        corrupt("truncated header");
    }
    return parse_header(prefix, size);
}

std::vector<uint8_t> to_le_bytes(std::span<const uint32_t> words) {
    std::vector<uint8_t> out(words.size() * 4);
    for (size_t i = 0; i < words.size(); ++i) {
        for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<uint8_t>((words[i] >> (8 * b)) & 0xffu);
    }
    return out;
}

std::vector<uint8_t> to_le_bytes(std::span<const uint16_t> halves) {
    std::vector<uint8_t> out(halves.size() * 2);
    for (size_t i = 0; i < halves.size(); ++i) {
        out[i * 2] = static_cast<uint8_t>(halves[i] & 0xffu);
        out[i * 2 + 1] = static_cast<uint8_t>(halves[i] >> 8);
    }
    return out;
}

std::vector<uint32_t> u32_from_le(std::span<const uint8_t> bytes) {
    std::vector<uint32_t> out(bytes.size() / 4);
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<uint32_t>(bytes[i * 4]) | static_cast<uint32_t>(bytes[i * 4 + 1]) << 8 |
                 static_cast<uint32_t>(bytes[i * 4 + 2]) << 16 | static_cast<uint32_t>(bytes[i * 4 + 3]) << 24;
    }
    return out;
}

std::vector<uint16_t> u16_from_le(std::span<const uint8_t> bytes) {
    std::vector<uint16_t> out(bytes.size() / 2);
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<uint16_t>(bytes[i * 2] | (bytes[i * 2 + 1] << 8));
    }
    return out;
}

}  // namespace agentcache::safetensors
