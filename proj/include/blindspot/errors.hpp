// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blindspot {

/// Error classes. Each maps to a distinct CLI exit status.
enum class ErrorCode {
  kInvalidArgument,
  kConfig,
  kCorpus,
  kPrompt,
  kTransport,
  kRateLimited,
  kSchema,
  kLogprobsUnsupported,
  kAudit,
  kSynthesis,
  kVerification,
  kStageOrder,
  kState,
  kIo,
  kTrainer,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace blindspot
