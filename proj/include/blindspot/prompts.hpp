// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blindspot/gateway.hpp"

namespace blindspot {

enum class PromptKind { kStudentCot, kAuditAgent, kTeacherRejected, kTeacherChosen, kVerification, kJudge };

inline constexpr std::array<PromptKind, 6> kAllPromptKinds = {
    PromptKind::kStudentCot,     PromptKind::kAuditAgent,   PromptKind::kTeacherRejected,
    PromptKind::kTeacherChosen, PromptKind::kVerification, PromptKind::kJudge};

/// File stem used under the template directory, e.g. "teacher_rejected".
std::string_view to_string(PromptKind kind);
std::optional<PromptKind> parse_prompt_kind(std::string_view name);

/// Per-call placeholders each kind requires, sorted.
const std::vector<std::string>& required_bindings(PromptKind kind);

/// Labels offered to the audit agent unless the config overrides them.
inline const std::vector<std::string> kDefaultErrorTaxonomy = {
    "missing condition",        "logical leap",       "statutory misinterpretation",
    "hallucinated clause",      "scope overreach",    "conclusion mismatch"};

/// Bullet list used for the {{error_taxonomy}} template constant.
std::string taxonomy_bullets(const std::vector<std::string>& labels);

using Bindings = std::map<std::string, std::string>;

struct RenderedPrompt {
  std::string system;
  std::string user;
  PromptKind kind = PromptKind::kStudentCot;
  std::string binding_digest;

  std::vector<ChatMessage> messages() const;
};

/// Renders the six prompt kinds from external templates.
///
/// Templates live at <dir>/<kind>.system.txt and <dir>/<kind>.user.txt and use
/// {{name}} placeholders. Substitution is a single pass: text supplied in a
/// binding is copied literally and never re-scanned for placeholders.
///
/// Constants are run-level values (the audit agent's error taxonomy) that
/// templates may reference without them being part of the per-call bindings.
class PromptForge {
 public:
  static PromptForge load(const std::filesystem::path& dir, Bindings constants = {});

  /// `bindings` must name exactly required_bindings(kind), each non-empty.
  RenderedPrompt render(PromptKind kind, const Bindings& bindings) const;

  /// A template is a list of literal text and placeholder segments.
  struct Segment {
    bool placeholder = false;
    std::string text;  // literal text, or the placeholder name
  };
  using Template = std::vector<Segment>;

  static Template parse_template(std::string_view text);

 private:
  struct Pair {
    Template system;
    Template user;
  };
  std::array<Pair, kAllPromptKinds.size()> templates_;
  Bindings constants_;
};

}  // namespace blindspot
