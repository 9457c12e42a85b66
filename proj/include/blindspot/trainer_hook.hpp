// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "blindspot/config.hpp"
#include "blindspot/io.hpp"

namespace blindspot {

/// What the external trainer receives for one round.
struct TrainerRequest {
  std::optional<std::filesystem::path> sft_path;  // round 0 only
  std::filesystem::path dpo_path;
  std::string policy_checkpoint;
  std::string reference_checkpoint;
  Json hparams = Json::object();
  int iteration = 0;
};

/// {sft_path?, dpo_path, policy_checkpoint, reference_checkpoint, hparams, iteration}.
Json to_json(const TrainerRequest& r);

/// Finds the last line of `output` that is a JSON object with a non-empty
/// string "new_checkpoint". Throws kTrainer if there is none.
std::string parse_trainer_reply(std::string_view output);

class TrainerHook {
 public:
  virtual ~TrainerHook() = default;
  /// Trains one round and returns the new policy checkpoint reference.
  virtual std::string train(const TrainerRequest& request) = 0;
};

/// Runs a shell command. The request is written to
/// <work_dir>/train_request.round-<t>.json;
/// "{request_file}" in the template is replaced by that path (single-quoted),
/// otherwise the path is appended as the last argument. The reply is read from
/// stdout.
class CommandTrainerHook : public TrainerHook {
 public:
  CommandTrainerHook(std::string command_template, std::filesystem::path work_dir);
  std::string train(const TrainerRequest& request) override;

  /// The command line that would run for `request_file`.
  std::string command_for(const std::filesystem::path& request_file) const;

 private:
  std::string template_;
  std::filesystem::path work_dir_;
};

/// POSTs the request as JSON; the response body carries the reply.
class HttpTrainerHook : public TrainerHook {
 public:
  explicit HttpTrainerHook(std::string url, std::chrono::seconds timeout = std::chrono::seconds(0));
  std::string train(const TrainerRequest& request) override;

 private:
  std::string url_;
  std::chrono::seconds timeout_;
};

/// nullptr when neither a command nor a URL is configured.
std::shared_ptr<TrainerHook> make_trainer_hook(const TrainerSettings& settings,
                                               const std::filesystem::path& work_dir);

}  // namespace blindspot
