// SPDX-License-Identifier: Apache-2.0
#include "blindspot/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "blindspot/errors.hpp"
#include "blindspot/hashing.hpp"
#include "blindspot/io.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kStudentCot: return "student_cot";
    case PromptKind::kAuditAgent: return "audit_agent";
    case PromptKind::kTeacherRejected: return "teacher_rejected";
    case PromptKind::kTeacherChosen: return "teacher_chosen";
    case PromptKind::kVerification: return "verification";
    case PromptKind::kJudge: return "judge";
  }
  return "student_cot";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view name) {
  for (PromptKind k : kAllPromptKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

const std::vector<std::string>& required_bindings(PromptKind kind) {
  static const std::vector<std::string> student{"contract", "question"};
  static const std::vector<std::string> audit{"contract", "ground_truth", "question",
                                              "student_answer"};
  static const std::vector<std::string> rejected{"contract",          "correct_answer",
                                                 "error_types",       "generic_summary",
                                                 "question",          "reproduction_instruction"};
  static const std::vector<std::string> chosen{"contract",        "correct_answer",
                                               "error_types",     "generic_summary",
                                               "question",        "rejected_response",
                                               "reproduction_instruction"};
  static const std::vector<std::string> verification{"candidate_response", "contract",
                                                     "question"};
  static const std::vector<std::string> judge{"contract", "ground_truth", "model_generation",
                                              "question"};
  switch (kind) {
    case PromptKind::kStudentCot: return student;
    case PromptKind::kAuditAgent: return audit;
    case PromptKind::kTeacherRejected: return rejected;
    case PromptKind::kTeacherChosen: return chosen;
    case PromptKind::kVerification: return verification;
    case PromptKind::kJudge: return judge;
  }
  return student;
}

std::string taxonomy_bullets(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += '\n';
    out += "- " + labels[i];
  }
  return out;
}

std::vector<ChatMessage> RenderedPrompt::messages() const {
  return {ChatMessage{ChatRole::kSystem, system}, ChatMessage{ChatRole::kUser, user}};
}

PromptForge::Template PromptForge::parse_template(std::string_view text) {
  Template out;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "{{") == 0) {
      const auto close = text.find("}}", i + 2);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::kPrompt, "unterminated placeholder in template");
      }
      const std::string_view name = text.substr(i + 2, close - i - 2);
      const bool valid = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::islower(static_cast<unsigned char>(c)) || c == '_';
      });
      if (!valid) {
        throw Error(ErrorCode::kPrompt, "malformed placeholder {{" + std::string(name) + "}}");
      }
      if (!literal.empty()) out.push_back({false, std::move(literal)});
      literal.clear();
      out.push_back({true, std::string(name)});
      i = close + 2;
    } else {
      literal.push_back(text[i++]);
    }
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

namespace {

std::string load_template_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kPrompt, "missing template " + path.string());
  }
  std::string text = read_text_file(path);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

void collect(const PromptForge::Template& t, std::set<std::string>& names) {
  for (const auto& seg : t) {
    if (seg.placeholder) names.insert(seg.text);
  }
}

std::string substitute(const PromptForge::Template& t, const Bindings& bindings,
                       const Bindings& constants) {
  std::string out;
  for (const auto& seg : t) {
    if (!seg.placeholder) {
      out += seg.text;
    } else if (auto it = bindings.find(seg.text); it != bindings.end()) {
      out += it->second;
    } else {
      out += constants.at(seg.text);
    }
  }
  return out;
}

}  // namespace

PromptForge PromptForge::load(const std::filesystem::path& dir, Bindings constants) {
  PromptForge forge;
  forge.constants_ = std::move(constants);
  for (std::size_t i = 0; i < kAllPromptKinds.size(); ++i) {
    const PromptKind kind = kAllPromptKinds[i];
    const std::string stem(to_string(kind));
    Pair& p = forge.templates_[i];
    p.system = parse_template(load_template_file(dir / (stem + ".system.txt")));
    p.user = parse_template(load_template_file(dir / (stem + ".user.txt")));

    std::set<std::string> used;
    collect(p.system, used);
    collect(p.user, used);
    const auto& req = required_bindings(kind);
    for (const auto& name : req) {
      if (!used.count(name)) {
        throw Error(ErrorCode::kPrompt, stem + " templates never use {{" + name + "}}");
      }
    }
    for (const auto& name : used) {
      const bool required = std::binary_search(req.begin(), req.end(), name);
      if (!required && !forge.constants_.count(name)) {
        throw Error(ErrorCode::kPrompt,
                    stem + " templates reference unknown placeholder {{" + name + "}}");
      }
    }
  }
  return forge;
}

RenderedPrompt PromptForge::render(PromptKind kind, const Bindings& bindings) const {
  const auto& req = required_bindings(kind);
  for (const auto& name : req) {
    auto it = bindings.find(name);
    if (it == bindings.end()) {
      throw Error(ErrorCode::kPrompt, "MissingBinding(" + name + ")");
    }
    if (trim(it->second).empty()) {
      throw Error(ErrorCode::kPrompt, "EmptyBinding(" + name + ")");
    }
  }
  for (const auto& [name, _] : bindings) {
    if (!std::binary_search(req.begin(), req.end(), name)) {
      throw Error(ErrorCode::kPrompt, "ExtraBinding(" + name + ")");
    }
  }

  const auto index = static_cast<std::size_t>(
      std::find(kAllPromptKinds.begin(), kAllPromptKinds.end(), kind) - kAllPromptKinds.begin());
  const Pair& p = templates_[index];
  RenderedPrompt out;
  out.kind = kind;
  out.system = substitute(p.system, bindings, constants_);
  out.user = substitute(p.user, bindings, constants_);
  out.binding_digest =
      sha256_hex(Json{{"kind", std::string(to_string(kind))}, {"bindings", bindings}}.dump());
  return out;
}

}  // namespace blindspot
