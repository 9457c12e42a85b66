// SPDX-License-Identifier: Apache-2.0
#include "blindspot/errors.hpp"

namespace blindspot {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kCorpus: return "Corpus";
    case ErrorCode::kPrompt: return "Prompt";
    case ErrorCode::kTransport: return "Transport";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kSchema: return "Schema";
    case ErrorCode::kLogprobsUnsupported: return "LogprobsUnsupported";
    case ErrorCode::kAudit: return "Audit";
    case ErrorCode::kSynthesis: return "Synthesis";
    case ErrorCode::kVerification: return "Verification";
    case ErrorCode::kStageOrder: return "StageOrderViolation";
    case ErrorCode::kState: return "State";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kTrainer: return "Trainer";
  }
  return "Unknown";
}

}  // namespace blindspot
