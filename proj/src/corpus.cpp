// SPDX-License-Identifier: Apache-2.0
#include "blindspot/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

#include "blindspot/errors.hpp"
#include "blindspot/hashing.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

std::optional<Verdict> parse_verdict(std::string_view text) {
  const std::string t = to_lower(trim(text));
  if (t == "yes") return Verdict::kYes;
  if (t == "no") return Verdict::kNo;
  return std::nullopt;
}

std::string_view to_string(Verdict v) { return v == Verdict::kYes ? "Yes" : "No"; }

const LegalSample* Corpus::find(std::string_view id) const {
  auto it = std::find_if(samples.begin(), samples.end(),
                         [&](const LegalSample& s) { return s.id == id; });
  return it == samples.end() ? nullptr : &*it;
}

namespace {

std::string required_string(const Json& raw, const char* field) {
  auto it = raw.find(field);
  if (it == raw.end() || it->is_null()) {
    throw Error(ErrorCode::kCorpus, std::string("MissingField(") + field + ")");
  }
  if (!it->is_string()) {
    throw Error(ErrorCode::kCorpus, std::string("field ") + field + " must be a string");
  }
  return std::string(trim(it->get<std::string>()));
}

}  // namespace

LegalSample validate_sample(const Json& raw, const std::optional<std::string>& fallback_id) {
  if (!raw.is_object()) throw Error(ErrorCode::kCorpus, "record is not a JSON object");
  LegalSample s;
  if (raw.contains("id") || !fallback_id) {
    s.id = required_string(raw, "id");
    if (s.id.empty()) throw Error(ErrorCode::kCorpus, "empty id");
  } else {
    s.id = *fallback_id;
  }
  s.context = required_string(raw, "context");
  s.query = required_string(raw, "question");
  const std::string answer = required_string(raw, "answer");
  if (s.context.empty()) throw Error(ErrorCode::kCorpus, "EmptyField(context)");
  if (s.query.empty()) throw Error(ErrorCode::kCorpus, "EmptyField(question)");
  auto gold = parse_verdict(answer);
  if (!gold) throw Error(ErrorCode::kCorpus, "unparseable gold label \"" + answer + "\"");
  s.gold = *gold;
  return s;
}

Json sample_to_json(const LegalSample& s) {
  return Json{{"id", s.id},
              {"context", s.context},
              {"question", s.query},
              {"answer", std::string(to_string(s.gold))}};
}

std::string corpus_content_hash(const std::vector<LegalSample>& samples) {
  std::vector<Json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(sample_to_json(s));
  return sha256_hex(to_jsonl(rows));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kCorpus, "cannot open corpus " + path.string());

  Corpus corpus;
  corpus.source_path = path.string();
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = " at line " + std::to_string(lineno);
    Json raw;
    try {
      raw = Json::parse(line);
    } catch (const Json::parse_error&) {
      throw Error(ErrorCode::kCorpus, "malformed line" + where);
    }
    LegalSample s;
    try {
      // Samples without ids are named after their content and position.
      const std::string synthetic = sha256_hex(line).substr(0, 12) + ":" + std::to_string(lineno);
      s = validate_sample(raw, synthetic);
    } catch (const Error& e) {
      throw Error(ErrorCode::kCorpus, std::string(e.what()) + where);
    }
    if (!seen.insert(s.id).second) {
      throw Error(ErrorCode::kCorpus, "duplicate id \"" + s.id + "\"" + where);
    }
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) {
    throw Error(ErrorCode::kCorpus, "empty corpus " + path.string());
  }
  corpus.content_hash = corpus_content_hash(corpus.samples);
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const std::vector<LegalSample>& samples) {
  std::vector<Json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(sample_to_json(s));
  write_jsonl(path, rows);
}

}  // namespace blindspot
