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

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace latscale {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kMissingColumn,
  kRaggedRow,
  kNonNumeric,
  kDuplicateTimeIndex,
  kOutOfOrder,
  kEmptyInput,
  kDatasetTooShort,
  kShapeMismatch,
  kLengthMismatch,
  kZeroVariance,
  kUnconfiguredService,
  kUnknownService,
  kFactorizationFailure,
  kNonFinite,
  kNotInCatalog,
  kCheckpointMismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by CSV ingestion; carries the 1-based data row of the offending line
// (the header is row 0) and the column name when one applies.
class DataError : public Error {
 public:
  DataError(ErrorCode code, const std::string& message, std::size_t row,
            std::optional<std::string> column = std::nullopt);

  std::size_t row() const noexcept { return row_; }
  const std::optional<std::string>& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::optional<std::string> column_;
};

}  // namespace latscale
