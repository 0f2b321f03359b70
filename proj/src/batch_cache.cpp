// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/batch_cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agentcache/bf16.hpp"
#include "agentcache/error.hpp"

namespace agentcache {

namespace {

constexpr uint16_t kFillerScale = 0x3f80;  // bf16 1.0

/// Stacks rows left-padded to padded_len. rows[r] has shape (heads, len_r, dim).
QuantizedTensor stack_rows(std::span<const QuantizedTensor> rows, uint32_t heads, uint32_t dim, uint32_t group,
                           uint32_t padded_len) {
    QuantizedTensor out = QuantizedTensor::empty(static_cast<uint32_t>(rows.size()) * heads, dim, group);
    out.tokens = padded_len;
    const uint32_t wpr = out.words_per_row();
    const uint32_t gpr = out.groups_per_row();
    const size_t total_rows = static_cast<size_t>(out.heads) * padded_len;
    out.packed.assign(total_rows * wpr, 0u);
    out.scales.assign(total_rows * gpr, kFillerScale);
    out.biases.assign(total_rows * gpr, uint16_t{0});
    for (size_t r = 0; r < rows.size(); ++r) {
        const QuantizedTensor& src = rows[r];
        const uint32_t pad = padded_len - src.tokens;
        for (uint32_t h = 0; h < heads; ++h) {
            const size_t dst_row = (r * heads + h) * padded_len + pad;
            const size_t src_row = static_cast<size_t>(h) * src.tokens;
            std::copy_n(src.packed.begin() + src_row * wpr, static_cast<size_t>(src.tokens) * wpr,
                        out.packed.begin() + dst_row * wpr);
            std::copy_n(src.scales.begin() + src_row * gpr, static_cast<size_t>(src.tokens) * gpr,
                        out.scales.begin() + dst_row * gpr);
            std::copy_n(src.biases.begin() + src_row * gpr, static_cast<size_t>(src.tokens) * gpr,
                        out.biases.begin() + dst_row * gpr);
        }
    }
    return out;
}

/// Heads [row*heads, (row+1)*heads) and tokens [begin, end) of a stacked tensor.
QuantizedTensor take_row(const QuantizedTensor& q, uint32_t row, uint32_t heads, uint32_t begin, uint32_t end) {
    QuantizedTensor out = QuantizedTensor::empty(heads, q.dim, q.group_size);
    out.tokens = end - begin;
    const uint32_t wpr = q.words_per_row();
    const uint32_t gpr = q.groups_per_row();
    for (uint32_t h = 0; h < heads; ++h) {
        const size_t r0 = (static_cast<size_t>(row) * heads + h) * q.tokens + begin;
        const size_t r1 = r0 + out.tokens;
        out.packed.insert(out.packed.end(), q.packed.begin() + r0 * wpr, q.packed.begin() + r1 * wpr);
        out.scales.insert(out.scales.end(), q.scales.begin() + r0 * gpr, q.scales.begin() + r1 * gpr);
        out.biases.insert(out.biases.end(), q.biases.begin() + r0 * gpr, q.biases.begin() + r1 * gpr);
    }
    return out;
}

}  // namespace

BatchCache merge(std::span<const AgentCache* const> caches, const ModelCacheSpec& spec, uint32_t max_batch) {
    if (caches.empty()) throw Error(ErrorCode::InvalidArgument, "merge needs at least one cache");
    if (caches.size() > max_batch) {
        throw Error(ErrorCode::InvalidArgument, "merge of " + std::to_string(caches.size()) +
                                                    " caches exceeds max batch " + std::to_string(max_batch));
    }
    BatchCache b;
    b.batch = static_cast<uint32_t>(caches.size());
    b.kv_heads = spec.num_kv_heads();
    b.spec_fingerprint = spec_fingerprint(spec);
    for (const AgentCache* c : caches) {
        if (c->spec_fingerprint != b.spec_fingerprint) {
            throw Error(ErrorCode::SpecMismatch, "agent '" + c->agent_id + "' has a different spec fingerprint");
        }
        b.agent_ids.push_back(c->agent_id);
        b.valid_lens.push_back(static_cast<uint32_t>(c->token_count()));
    }
    b.padded_len = *std::max_element(b.valid_lens.begin(), b.valid_lens.end());

    for (uint32_t l = 0; l < spec.num_layers(); ++l) {
        std::vector<QuantizedTensor> ks, vs;
        for (const AgentCache* c : caches) {
            auto [k, v] = concat_layer(c->blocks.at(l), spec);
            ks.push_back(std::move(k));
            vs.push_back(std::move(v));
        }
        b.layers.emplace_back(stack_rows(ks, b.kv_heads, spec.k_head_dim(), spec.group_size(), b.padded_len),
                              stack_rows(vs, b.kv_heads, spec.v_head_dim(), spec.group_size(), b.padded_len));
    }
    return b;
}

BatchCache update_and_fetch(BatchCache b, std::span<const LayerKV> new_kv, const ModelCacheSpec& spec) {
    if (new_kv.size() != b.layers.size()) throw Error(ErrorCode::ShapeError, "need new KV for every layer");
    const auto check = [&](const Tensor& t, uint32_t dim) {
        if (t.rank() != 4 || t.dim(0) != b.batch || t.dim(1) != b.kv_heads || t.dim(2) == 0 || t.dim(3) != dim ||
            t.dim(2) != new_kv[0].k.dim(2)) {
            throw Error(ErrorCode::ShapeError, "new KV must be (batch, kv_heads, t_new >= 1, head_dim)");
        }
    };
    for (const auto& kv : new_kv) {
        check(kv.k, spec.k_head_dim());
        check(kv.v, spec.v_head_dim());
    }
    const auto t_new = static_cast<uint32_t>(new_kv[0].k.dim(2));
    for (size_t l = 0; l < new_kv.size(); ++l) {
        // (batch, heads, t, d) has the same memory layout as (batch*heads, t, d)
        const auto flat = [&](const Tensor& t) {
            return Tensor({t.dim(0) * t.dim(1), t.dim(2), t.dim(3)}, std::vector<float>(t.data().begin(), t.data().end()));
        };
        append_tokens(b.layers[l].first, quantize_tensor(flat(new_kv[l].k), spec.group_size()));
        append_tokens(b.layers[l].second, quantize_tensor(flat(new_kv[l].v), spec.group_size()));
    }
    for (auto& len : b.valid_lens) len += t_new;
    b.padded_len += t_new;
    return b;
}

std::vector<LayerBlocks> extract(const BatchCache& b, const ModelCacheSpec& spec) {
    std::vector<LayerBlocks> out(b.batch, LayerBlocks(b.layers.size()));
    for (uint32_t r = 0; r < b.batch; ++r) {
        const uint32_t begin = b.pad_start(r);
        for (uint32_t l = 0; l < b.layers.size(); ++l) {
            const auto k = take_row(b.layers[l].first, r, b.kv_heads, begin, b.padded_len);
            const auto v = take_row(b.layers[l].second, r, b.kv_heads, begin, b.padded_len);
            append_to_layer(out[r][l], l, k, v, spec.block_tokens());
        }
    }
    return out;
}

AttentionMask build_mask(const AttentionKind& kind, uint32_t q_len, uint32_t k_len,
                         std::span<const uint32_t> valid_lens) {
    if (q_len > k_len) throw Error(ErrorCode::InvalidArgument, "q_len must not exceed k_len");
    if (valid_lens.empty()) throw Error(ErrorCode::InvalidArgument, "mask needs at least one row");
    AttentionMask m;
    m.batch = static_cast<uint32_t>(valid_lens.size());
    m.q_len = q_len;
    m.k_len = k_len;
    m.visible.assign(static_cast<size_t>(m.batch) * q_len * k_len, 0);
    for (uint32_t r = 0; r < m.batch; ++r) {
        if (valid_lens[r] > k_len) throw Error(ErrorCode::InvalidArgument, "valid length exceeds k_len");
        const int64_t pad_start = k_len - valid_lens[r];
        for (uint32_t i = 0; i < q_len; ++i) {
            const int64_t pos = static_cast<int64_t>(k_len) - q_len + i;
            int64_t lo = pad_start;
            if (!kind.is_global()) lo = std::max<int64_t>(lo, pos - kind.window() + 1);
            for (int64_t j = lo; j <= pos; ++j) {
                m.visible[(static_cast<size_t>(r) * q_len + i) * k_len + static_cast<size_t>(j)] = 1;
            }
        }
    }
    return m;
}

Tensor oracle_attention(const Tensor& q, const BatchCache& b, uint32_t layer, const ModelCacheSpec& spec) {
    if (layer >= b.layers.size()) throw Error(ErrorCode::ShapeError, "layer index out of range");
    if (q.rank() != 4 || q.dim(0) != b.batch || q.dim(1) != spec.num_query_heads() || q.dim(3) != spec.k_head_dim()) {
        throw Error(ErrorCode::ShapeError, "queries must be (batch, query_heads, q_len, k_head_dim)");
    }
    const auto q_len = static_cast<uint32_t>(q.dim(2));
    const uint32_t k_len = b.padded_len;
    if (q_len > k_len) throw Error(ErrorCode::ShapeError, "more queries than cached positions");
    for (uint32_t len : b.valid_lens) {
        if (len < q_len) throw Error(ErrorCode::ShapeError, "queries would start inside left padding");
    }

    const Tensor keys = dequantize_tensor(b.layers[layer].first);   // (batch*kv, k_len, dk)
    const Tensor vals = dequantize_tensor(b.layers[layer].second);  // (batch*kv, k_len, dv)
    const AttentionMask mask = build_mask(spec.layer_kind(layer), q_len, k_len, b.valid_lens);
    const uint32_t dk = spec.k_head_dim();
    const uint32_t dv = spec.v_head_dim();
    const uint32_t n_rep = spec.n_rep();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor out({b.batch, spec.num_query_heads(), q_len, dv});
    std::vector<double> logits(k_len);
    std::vector<double> acc(dv);
    for (uint32_t r = 0; r < b.batch; ++r) {
        for (uint32_t kvh = 0; kvh < b.kv_heads; ++kvh) {
            const size_t kv_row = static_cast<size_t>(r) * b.kv_heads + kvh;
            for (uint32_t rep = 0; rep < n_rep; ++rep) {
                const uint32_t qh = kvh * n_rep + rep;
                for (uint32_t i = 0; i < q_len; ++i) {
                    double max_logit = -std::numeric_limits<double>::infinity();
                    for (uint32_t j = 0; j < k_len; ++j) {
                        if (!mask.is_visible(r, i, j)) continue;
                        double dot = 0.0;
                        for (uint32_t d = 0; d < dk; ++d) {
                            dot += static_cast<double>(q.at(r, qh, i, d)) * keys.at(kv_row, j, d);
                        }
                        logits[j] = dot * scale;
                        max_logit = std::max(max_logit, logits[j]);
                    }
                    std::fill(acc.begin(), acc.end(), 0.0);
                    double denom = 0.0;
                    if (std::isfinite(max_logit)) {
                        for (uint32_t j = 0; j < k_len; ++j) {
                            if (!mask.is_visible(r, i, j)) continue;
                            const double w = std::exp(logits[j] - max_logit);
                            denom += w;
                            for (uint32_t d = 0; d < dv; ++d) acc[d] += w * vals.at(kv_row, j, d);
                        }
                    }
                    for (uint32_t d = 0; d < dv; ++d) {
                        out.at(r, qh, i, d) = denom > 0.0 ? static_cast<float>(acc[d] / denom) : 0.0f;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace agentcache
