// SPDX-License-Identifier: Apache-2.0
#include "blindspot/trainer_hook.hpp"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <sstream>

#include <httplib.h>

#include "blindspot/errors.hpp"
#include "blindspot/http_backend.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

Json to_json(const TrainerRequest& r) {
  Json j{{"dpo_path", r.dpo_path.string()},
         {"policy_checkpoint", r.policy_checkpoint},
         {"reference_checkpoint", r.reference_checkpoint},
         {"hparams", r.hparams},
         {"iteration", r.iteration}};
  j["sft_path"] = r.sft_path ? Json(r.sft_path->string()) : Json(nullptr);
  return j;
}

std::string parse_trainer_reply(std::string_view output) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(output)};
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const auto t = trim(*it);
    if (t.empty() || t.front() != '{') continue;
    try {
      const Json j = Json::parse(t);
      if (auto c = j.find("new_checkpoint"); c != j.end() && c->is_string() &&
                                             !c->get<std::string>().empty()) {
        return c->get<std::string>();
      }
    } catch (const Json::parse_error&) {
    }
  }
  throw Error(ErrorCode::kTrainer, "trainer reply has no {\"new_checkpoint\": ...} object");
}

CommandTrainerHook::CommandTrainerHook(std::string command_template, std::filesystem::path work_dir)
    : template_(std::move(command_template)), work_dir_(std::move(work_dir)) {
  if (trim(template_).empty()) throw Error(ErrorCode::kConfig, "empty trainer command");
}

std::string CommandTrainerHook::command_for(const std::filesystem::path& request_file) const {
  static constexpr std::string_view kPlaceholder = "{request_file}";
  const std::string quoted = shell_quote(request_file.string());
  std::string cmd = template_;
  const auto at = cmd.find(kPlaceholder);
  if (at == std::string::npos) return cmd + " " + quoted;
  for (auto pos = at; pos != std::string::npos; pos = cmd.find(kPlaceholder, pos + quoted.size())) {
    cmd.replace(pos, kPlaceholder.size(), quoted);
  }
  return cmd;
}

std::string CommandTrainerHook::train(const TrainerRequest& request) {
  std::filesystem::create_directories(work_dir_);
  const auto request_file =
      work_dir_ / ("train_request.round-" + std::to_string(request.iteration) + ".json");
  write_text_atomic(request_file, to_json(request).dump(2) + "\n");
  const std::string cmd = command_for(request_file);

  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw Error(ErrorCode::kTrainer, "cannot start trainer command");
  std::string output;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(ErrorCode::kTrainer,
                "trainer command failed with status " +
                    std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status));
  }
  return parse_trainer_reply(output);
}

HttpTrainerHook::HttpTrainerHook(std::string url, std::chrono::seconds timeout)
    : url_(std::move(url)), timeout_(timeout) {}

std::string HttpTrainerHook::train(const TrainerRequest& request) {
  const auto [origin, path] = split_url(url_);
  httplib::Client client(origin);
  if (timeout_.count() > 0) {
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
  } else {
    client.set_read_timeout(std::chrono::hours(24 * 7));
  }
  auto res = client.Post(path, to_json(request).dump(), "application/json");
  if (!res) throw Error(ErrorCode::kTrainer, "trainer endpoint: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error(ErrorCode::kTrainer, "trainer endpoint: HTTP " + std::to_string(res->status));
  }
  return parse_trainer_reply(res->body);
}

std::shared_ptr<TrainerHook> make_trainer_hook(const TrainerSettings& settings,
                                               const std::filesystem::path& work_dir) {
  if (!settings.command.empty()) return std::make_shared<CommandTrainerHook>(settings.command, work_dir);
  if (!settings.url.empty()) {
    return std::make_shared<HttpTrainerHook>(settings.url, std::chrono::seconds(settings.timeout_s));
  }
  return nullptr;
}

}  // namespace blindspot
