// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

#include "agentcache/error.hpp"

namespace agentcache {

/// Dense row-major FP32 tensor. Used only for staging and the attention
/// oracle; stored caches are always quantized.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
    Tensor(std::vector<size_t> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != element_count(shape_)) {
            throw Error(ErrorCode::ShapeError, "tensor data does not match its shape");
        }
    }

    const std::vector<size_t>& shape() const noexcept { return shape_; }
    size_t dim(size_t axis) const { return shape_.at(axis); }
    size_t rank() const noexcept { return shape_.size(); }
    size_t size() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    template <typename... Idx>
    float& at(Idx... idx) { return data_[offset({static_cast<size_t>(idx)...})]; }
    template <typename... Idx>
    float at(Idx... idx) const { return data_[offset({static_cast<size_t>(idx)...})]; }

    bool operator==(const Tensor&) const = default;

    static size_t element_count(const std::vector<size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
    }

private:
    size_t offset(std::initializer_list<size_t> idx) const {
        size_t off = 0;
        size_t axis = 0;
        for (size_t i : idx) off = off * shape_[axis++] + i;
        return off;
    }

    std::vector<size_t> shape_;
    std::vector<float> data_;
};

}  // namespace agentcache
