// SPDX-License-Identifier: Apache-2.0
#include "blindspot/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "blindspot/errors.hpp"
#include "blindspot/prompts.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

namespace fs = std::filesystem;

namespace {

using Setter = std::function<void(PipelineConfig&, const std::string& value, const fs::path& base)>;

struct Key {
  std::string section;
  std::string name;
  Setter set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw Error(ErrorCode::kConfig, "invalid value \"" + value + "\" for " + key + ": expected " + want);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  const std::string_view v = trim(value);
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, value, std::is_floating_point_v<T> ? "a number" : "an integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = to_lower(trim(value));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "true or false");
}

fs::path resolve(const std::string& value, const fs::path& base) {
  fs::path p(std::string(trim(value)));
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

void add_endpoint_keys(std::vector<Key>& keys, const std::string& section,
                       EndpointProfile PipelineConfig::*member) {
  const auto qual = [section](const char* k) { return section + "." + k; };
  keys.push_back({section, "base_url", [member](PipelineConfig& c, const std::string& v, const fs::path&) {
                    (c.*member).base_url = std::string(trim(v));
                  }});
  keys.push_back({section, "model", [member](PipelineConfig& c, const std::string& v, const fs::path&) {
                    (c.*member).model_name = std::string(trim(v));
                  }});
  keys.push_back({section, "auth_env", [member](PipelineConfig& c, const std::string& v, const fs::path&) {
                    (c.*member).auth_env_var = std::string(trim(v));
                  }});
  keys.push_back({section, "max_parallel",
                  [member, k = qual("max_parallel")](PipelineConfig& c, const std::string& v, const fs::path&) {
                    (c.*member).max_parallel = parse_number<int>(k, v);
                  }});
  keys.push_back({section, "retry_budget",
                  [member, k = qual("retry_budget")](PipelineConfig& c, const std::string& v, const fs::path&) {
                    (c.*member).retry_budget = parse_number<int>(k, v);
                  }});
}

template <typename T>
Setter number_setter(std::string key, T PipelineConfig::*member) {
  return [key, member](PipelineConfig& c, const std::string& v, const fs::path&) {
    c.*member = parse_number<T>(key, v);
  };
}

Setter temp_setter(std::string key, double StageTemperatures::*member) {
  return [key, member](PipelineConfig& c, const std::string& v, const fs::path&) {
    c.temperatures.*member = parse_number<double>(key, v);
  };
}

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    const std::string p = "pipeline";
    k.push_back({p, "corpus", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   c.corpus_path = resolve(v, b);
                 }});
    k.push_back({p, "eval", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   c.eval_paths.clear();
                   for (const auto& item : split_list(v)) c.eval_paths.push_back(resolve(item, b));
                 }});
    k.push_back({p, "run_dir", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   c.run_dir = resolve(v, b);
                 }});
    k.push_back({p, "prompts_dir", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   c.prompts_dir = resolve(v, b);
                 }});
    k.push_back({p, "cache", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   c.cache_path = resolve(v, b);
                 }});
    k.push_back({p, "mock_transcripts", [](PipelineConfig& c, const std::string& v, const fs::path& b) {
                   if (trim(v).empty()) {
                     c.mock_transcripts.reset();
                   } else {
                     c.mock_transcripts = resolve(v, b);
                   }
                 }});
    k.push_back({p, "iterations", number_setter("pipeline.iterations", &PipelineConfig::iterations)});
    k.push_back({p, "k", number_setter("pipeline.k", &PipelineConfig::k)});
    k.push_back({p, "tau", number_setter("pipeline.tau", &PipelineConfig::tau)});
    k.push_back({p, "exploration_fraction",
                 number_setter("pipeline.exploration_fraction", &PipelineConfig::exploration_fraction)});
    k.push_back({p, "resample", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.resample = parse_bool("pipeline.resample", v);
                 }});
    k.push_back({p, "seed", number_setter("pipeline.seed", &PipelineConfig::seed)});
    k.push_back({p, "drop_fraction_limit",
                 number_setter("pipeline.drop_fraction_limit", &PipelineConfig::drop_fraction_limit)});
    k.push_back({p, "audit_retries", number_setter("pipeline.audit_retries", &PipelineConfig::audit_retries)});
    k.push_back({p, "synthesis_retries",
                 number_setter("pipeline.synthesis_retries", &PipelineConfig::synthesis_retries)});
    k.push_back({p, "strict_taxonomy", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.strict_taxonomy = parse_bool("pipeline.strict_taxonomy", v);
                 }});
    k.push_back({p, "taxonomy", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.taxonomy = split_list(v);
                 }});
    k.push_back({p, "context_ngram", number_setter("pipeline.context_ngram", &PipelineConfig::context_ngram)});
    k.push_back({p, "top_k", number_setter("pipeline.top_k", &PipelineConfig::top_k)});
    k.push_back({p, "label_floor", number_setter("pipeline.label_floor", &PipelineConfig::label_floor)});
    k.push_back({p, "max_tokens", number_setter("pipeline.max_tokens", &PipelineConfig::max_tokens)});
    k.push_back({p, "use_judge", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.use_judge = parse_bool("pipeline.use_judge", v);
                 }});
    k.push_back({p, "base_checkpoint", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.base_checkpoint = std::string(trim(v));
                 }});

    const std::string t = "temperature";
    k.push_back({t, "exploration", temp_setter("temperature.exploration", &StageTemperatures::exploration)});
    k.push_back({t, "audit", temp_setter("temperature.audit", &StageTemperatures::audit)});
    k.push_back({t, "teacher", temp_setter("temperature.teacher", &StageTemperatures::teacher)});
    k.push_back({t, "verification", temp_setter("temperature.verification", &StageTemperatures::verification)});
    k.push_back({t, "judge", temp_setter("temperature.judge", &StageTemperatures::judge)});

    add_endpoint_keys(k, "student", &PipelineConfig::student);
    add_endpoint_keys(k, "teacher", &PipelineConfig::teacher);
    add_endpoint_keys(k, "auditor", &PipelineConfig::auditor);
    add_endpoint_keys(k, "judge", &PipelineConfig::judge);

    const std::string tr = "trainer";
    k.push_back({tr, "command", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.trainer.command = std::string(trim(v));
                 }});
    k.push_back({tr, "url", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.trainer.url = std::string(trim(v));
                 }});
    k.push_back({tr, "hparams", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.trainer.hparams = std::string(trim(v));
                 }});
    k.push_back({tr, "timeout_s", [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   c.trainer.timeout_s = parse_number<int>("trainer.timeout_s", v);
                 }});
    return k;
  }();
  return keys;
}

const Key& lookup(const std::string& section, const std::string& name) {
  const std::string s = to_lower(section);
  const std::string n = to_lower(name);
  for (const auto& key : schema()) {
    if (key.section == s && key.name == n) return key;
  }
  throw Error(ErrorCode::kConfig, "unknown config key " + (s.empty() ? n : s + "." + n));
}

const Key& lookup_override(const std::string& dotted) {
  const auto dot = dotted.find('.');
  if (dot != std::string::npos) return lookup(dotted.substr(0, dot), dotted.substr(dot + 1));
  const std::string n = to_lower(dotted);
  const Key* found = nullptr;
  std::vector<std::string> candidates;
  for (const auto& key : schema()) {
    if (key.name != n) continue;
    found = &key;
    candidates.push_back(key.section + "." + key.name);
  }
  if (candidates.empty()) throw Error(ErrorCode::kConfig, "unknown config key " + dotted);
  if (candidates.size() > 1) {
    throw Error(ErrorCode::kConfig,
                "ambiguous config key " + dotted + "; use one of " + join(candidates, ", "));
  }
  return *found;
}

}  // namespace

fs::path PipelineConfig::effective_cache_path() const {
  return cache_path.empty() ? run_dir / "transcripts.jsonl" : cache_path;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : schema()) out.push_back(k.section + "." + k.name);
  return out;
}

PipelineConfig parse_config(const std::string& ini_text, const fs::path& base_dir,
                            const std::vector<std::string>& overrides) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(ini_text);
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::kConfig, std::string("config parse error: ") + e.what());
  }

  PipelineConfig c;
  c.run_dir = resolve("run", base_dir);
  c.prompts_dir = resolve("prompts", base_dir);
  c.taxonomy = kDefaultErrorTaxonomy;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      // Keys before any section header belong to [pipeline].
      lookup("pipeline", name).set(c, node.data(), base_dir);
      continue;
    }
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw Error(ErrorCode::kConfig, "nested key " + name + "." + key);
      lookup(name, key).set(c, leaf.data(), base_dir);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kConfig, "override must look like key=value, got \"" + o + "\"");
    }
    lookup_override(std::string(trim(o.substr(0, eq)))).set(c, o.substr(eq + 1), fs::current_path());
  }
  validate_config(c);
  return c;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw Error(ErrorCode::kConfig, "config file not found: " + path.string());
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return parse_config(text, fs::absolute(path).parent_path(), overrides);
}

void validate_config(const PipelineConfig& c) {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, msg); };
  if (c.corpus_path.empty()) fail("pipeline.corpus is required");
  if (c.iterations < 1) fail("pipeline.iterations must be >= 1");
  if (c.k < 1) fail("pipeline.k must be >= 1");
  if (!(c.tau >= -1.0 && c.tau <= 1.0)) {
    fail("pipeline.tau must lie in [-1, 1] (difficulty scores are in (-1, 1)), got " +
         std::to_string(c.tau));
  }
  if (!(c.exploration_fraction > 0.0 && c.exploration_fraction <= 1.0)) {
    fail("pipeline.exploration_fraction must lie in (0, 1]");
  }
  if (!(c.drop_fraction_limit >= 0.0 && c.drop_fraction_limit <= 1.0)) {
    fail("pipeline.drop_fraction_limit must lie in [0, 1]");
  }
  if (c.audit_retries < 0 || c.synthesis_retries < 0) fail("retry counts must be >= 0");
  if (c.top_k < 2 || c.top_k > 20) fail("pipeline.top_k must lie in [2, 20]");
  if (!(c.label_floor > 0.0 && c.label_floor < 1.0)) fail("pipeline.label_floor must lie in (0, 1)");
  if (c.max_tokens < 1) fail("pipeline.max_tokens must be >= 1");
  if (c.taxonomy.empty()) fail("pipeline.taxonomy must not be empty");
  if (c.base_checkpoint.empty()) fail("pipeline.base_checkpoint must not be empty");
  for (double t : {c.temperatures.exploration, c.temperatures.audit, c.temperatures.teacher,
                   c.temperatures.verification, c.temperatures.judge}) {
    if (!(t >= 0.0 && t <= 2.0)) fail("temperatures must lie in [0, 2]");
  }
  for (const auto* e : {&c.student, &c.teacher, &c.auditor, &c.judge}) {
    if (e->model_name.empty()) fail(e->id + ".model must not be empty");
    if (e->max_parallel < 1) fail(e->id + ".max_parallel must be >= 1");
    if (e->retry_budget < 0) fail(e->id + ".retry_budget must be >= 0");
  }
  if (!c.trainer.command.empty() && !c.trainer.url.empty()) {
    fail("set at most one of trainer.command and trainer.url");
  }
  try {
    if (!Json::parse(c.trainer.hparams).is_object()) fail("trainer.hparams must be a JSON object");
  } catch (const Json::parse_error&) {
    fail("trainer.hparams is not valid JSON");
  }
}

void validate_environment(const PipelineConfig& c) {
  for (const auto* e : {&c.student, &c.teacher, &c.auditor, &c.judge}) {
    if (e->auth_env_var.empty()) continue;
    const char* v = std::getenv(e->auth_env_var.c_str());
    if (v == nullptr || *v == '\0') {
      throw Error(ErrorCode::kConfig, "environment variable " + e->auth_env_var + " (" + e->id +
                                          ".auth_env) is not set");
    }
  }
}

}  // namespace blindspot
