// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/error.hpp"

namespace agentcache {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::PersistError: return "PersistError";
    case ErrorCode::EvictionFailed: return "EvictionFailed";
    case ErrorCode::EngineFailure: return "EngineFailure";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

}  // namespace agentcache
