// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace agentcache {

enum class ErrorCode {
    NotFound,
    InvalidValue,
    InvalidArgument,
    ShapeError,
    SpecMismatch,
    CorruptFile,
    PersistError,
    EvictionFailed,
    EngineFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-readable code. what() is "<Code>: <message>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

}  // namespace agentcache
