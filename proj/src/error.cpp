// Copyright 2026 The latscale Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "latscale/error.hpp"

namespace latscale {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMissingColumn: return "missing-column";
    case ErrorCode::kRaggedRow: return "ragged-row";
    case ErrorCode::kNonNumeric: return "non-numeric";
    case ErrorCode::kDuplicateTimeIndex: return "duplicated-time-index";
    case ErrorCode::kOutOfOrder: return "out-of-order";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kDatasetTooShort: return "dataset-too-short";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kZeroVariance: return "zero-variance";
    case ErrorCode::kUnconfiguredService: return "unconfigured-service";
    case ErrorCode::kUnknownService: return "unknown-service";
    case ErrorCode::kFactorizationFailure: return "factorization-failure";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kNotInCatalog: return "not-in-catalog";
    case ErrorCode::kCheckpointMismatch: return "checkpoint-mismatch";
  }
  return "unknown";
}

namespace {

std::string locate(const std::string& message, std::size_t row,
                   const std::optional<std::string>& column) {
  std::string out = message + " (row " + std::to_string(row);
  if (column) out += ", column '" + *column + "'";
  return out + ")";
}

}  // namespace

DataError::DataError(ErrorCode code, const std::string& message,
                     std::size_t row, std::optional<std::string> column)
    : Error(code, locate(message, row, column)),
      row_(row),
      column_(std::move(column)) {}

}  // namespace latscale
