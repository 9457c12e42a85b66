// SPDX-License-Identifier: Apache-2.0
#include "blindspot/emitter.hpp"

#include <algorithm>
#include <set>

#include "blindspot/errors.hpp"
#include "blindspot/evaluation.hpp"
#include "blindspot/hashing.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

namespace {

Json meta_to_json(const RecordMeta& m) {
  return Json{{"pair_id", m.pair_id}, {"sample_id", m.sample_id}, {"iteration", m.iteration}};
}

RecordMeta meta_from_json(const Json& j) {
  return RecordMeta{j.at("pair_id").get<std::string>(), j.at("sample_id").get<std::string>(),
                    j.at("iteration").get<int>()};
}

void require_context(const EmitContext& ctx) {
  if (ctx.corpus == nullptr || ctx.forge == nullptr) {
    throw Error(ErrorCode::kInvalidArgument, "emit: corpus and prompt forge are required");
  }
}

const LegalSample& sample_for(const EmitContext& ctx, const PreferencePair& p) {
  const LegalSample* s = ctx.corpus->find(p.sample_id);
  if (s == nullptr) throw Error(ErrorCode::kState, "pair " + p.pair_id + " references unknown sample");
  return *s;
}

std::string student_prompt(const EmitContext& ctx, const LegalSample& s) {
  return flatten_prompt(
      ctx.forge->render(PromptKind::kStudentCot, {{"contract", s.context}, {"question", s.query}}));
}

}  // namespace

Json manifest_to_json(const Manifest& m) {
  return Json{{"file_path", m.file_path},
              {"record_count", m.record_count},
              {"content_hash", m.content_hash},
              {"iteration", m.iteration},
              {"source_hashes",
               {{"corpus", m.source_hashes.corpus},
                {"bank", m.source_hashes.bank},
                {"pairs", m.source_hashes.pairs}}},
              {"tool_version", m.tool_version},
              {"warnings", m.warnings}};
}

Manifest manifest_from_json(const Json& j) {
  Manifest m;
  m.file_path = j.at("file_path").get<std::string>();
  m.record_count = j.at("record_count").get<std::size_t>();
  m.content_hash = j.at("content_hash").get<std::string>();
  m.iteration = j.at("iteration").get<int>();
  const auto& s = j.at("source_hashes");
  m.source_hashes = {s.value("corpus", ""), s.value("bank", ""), s.value("pairs", "")};
  m.tool_version = j.value("tool_version", "");
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& data_file) {
  return data_file.parent_path() / (data_file.stem().string() + ".manifest.json");
}

Manifest write_artifact(const std::filesystem::path& path, const std::vector<Json>& rows,
                        int iteration, const SourceHashes& sources,
                        std::vector<std::string> warnings) {
  const std::string bytes = to_jsonl(rows);
  write_text_atomic(path, bytes);
  Manifest m;
  m.file_path = path.filename().string();
  m.record_count = rows.size();
  m.content_hash = sha256_hex(bytes);
  m.iteration = iteration;
  m.source_hashes = sources;
  m.warnings = std::move(warnings);
  write_text_atomic(manifest_path_for(path), manifest_to_json(m).dump(2) + "\n");
  return m;
}

Manifest read_manifest(const std::filesystem::path& data_file) {
  const auto mp = manifest_path_for(data_file);
  try {
    return manifest_from_json(Json::parse(read_text_file(mp)));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, "bad manifest " + mp.string() + ": " + e.what());
  }
}

bool verify_manifest(const std::filesystem::path& data_file) {
  if (!std::filesystem::exists(data_file) || !std::filesystem::exists(manifest_path_for(data_file))) {
    return false;
  }
  const Manifest m = read_manifest(data_file);
  const std::string bytes = read_text_file(data_file);
  const auto lines = static_cast<std::size_t>(std::count(bytes.begin(), bytes.end(), '\n'));
  return sha256_hex(bytes) == m.content_hash && lines == m.record_count;
}

std::string flatten_prompt(const RenderedPrompt& prompt) { return prompt.system + "\n\n" + prompt.user; }

Json to_json(const SftRecord& r) {
  return Json{{"prompt", r.prompt}, {"completion", r.completion}, {"meta", meta_to_json(r.meta)}};
}

Json to_json(const DpoRecord& r) {
  return Json{{"prompt", r.prompt},
              {"chosen", r.chosen},
              {"rejected", r.rejected},
              {"meta", meta_to_json(r.meta)}};
}

Manifest emit_sft(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path,
                  const EmitContext& ctx) {
  require_context(ctx);
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<Json> rows;
  for (const auto& p : pairs) {
    if (!seen.emplace(p.sample_id, p.chosen).second) continue;
    const LegalSample& s = sample_for(ctx, p);
    if (extract_verdict(p.chosen) != s.gold) {
      throw Error(ErrorCode::kInvalidArgument,
                  "pair " + p.pair_id + ": chosen response does not conclude with the gold verdict");
    }
    rows.push_back(to_json(SftRecord{student_prompt(ctx, s), p.chosen,
                                     {p.pair_id, p.sample_id, p.iteration}}));
  }
  std::vector<std::string> warnings;
  if (rows.empty()) warnings.emplace_back("empty filtered set");
  return write_artifact(path, rows, ctx.iteration, ctx.sources, std::move(warnings));
}

Manifest emit_dpo(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path,
                  const EmitContext& ctx) {
  require_context(ctx);
  std::vector<Json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.chosen == p.rejected) {
      throw Error(ErrorCode::kInvalidArgument, "DegeneratePair: " + p.pair_id);
    }
    const LegalSample& s = sample_for(ctx, p);
    rows.push_back(to_json(DpoRecord{student_prompt(ctx, s), p.chosen, p.rejected,
                                     {p.pair_id, p.sample_id, p.iteration}}));
  }
  std::vector<std::string> warnings;
  if (rows.empty()) warnings.emplace_back("empty filtered set");
  return write_artifact(path, rows, ctx.iteration, ctx.sources, std::move(warnings));
}

std::vector<SftRecord> read_sft(const std::filesystem::path& path) {
  std::vector<SftRecord> out;
  for (const auto& j : read_jsonl(path)) {
    out.push_back({j.at("prompt").get<std::string>(), j.at("completion").get<std::string>(),
                   meta_from_json(j.at("meta"))});
  }
  return out;
}

std::vector<DpoRecord> read_dpo(const std::filesystem::path& path) {
  std::vector<DpoRecord> out;
  for (const auto& j : read_jsonl(path)) {
    out.push_back({j.at("prompt").get<std::string>(), j.at("chosen").get<std::string>(),
                   j.at("rejected").get<std::string>(), meta_from_json(j.at("meta"))});
  }
  return out;
}

}  // namespace blindspot
