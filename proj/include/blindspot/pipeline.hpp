// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "blindspot/config.hpp"
#include "blindspot/corpus.hpp"
#include "blindspot/emitter.hpp"
#include "blindspot/gateway.hpp"
#include "blindspot/prompts.hpp"
#include "blindspot/trainer_hook.hpp"

namespace blindspot {

enum class Stage { kExplore, kDiagnose, kGenerate, kVerify, kFilter, kEmit, kTrain };

inline constexpr std::array<Stage, 7> kAllStages = {Stage::kExplore, Stage::kDiagnose,
                                                    Stage::kGenerate, Stage::kVerify,
                                                    Stage::kFilter,   Stage::kEmit,
                                                    Stage::kTrain};

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view name);

/// One finished round as kept in the state history.
struct RoundRecord {
  int t = 0;
  std::string start_policy;  // explored and verified with this checkpoint
  std::string reference;     // reference handed to the trainer
  std::string policy;        // checkpoint the trainer returned
  std::map<std::string, Manifest> manifests;
  Json metrics = Json::object();
};

struct IterationState {
  int t = 0;
  std::optional<Stage> cursor;  // last completed stage of round t
  std::string start_policy;
  std::string policy_checkpoint;
  std::string reference_checkpoint;
  std::string train_mode;  // "", "hook" or "external"
  std::map<std::string, Manifest> manifests;
  Json metrics = Json::object();
  std::vector<RoundRecord> history;

  bool completed(Stage s) const;
  /// Stage that would run next in round t.
  std::optional<Stage> next_stage() const;
};

Json state_to_json(const IterationState& s);
IterationState state_from_json(const Json& j);
void save_state(const std::filesystem::path& path, const IterationState& s);
IterationState load_state(const std::filesystem::path& path);

/// Round 0, nothing run; policy and reference both at the base checkpoint.
IterationState initial_state(const PipelineConfig& config);

/// Records the checkpoint an external trainer produced for round t.
IterationState record_trained_checkpoint(IterationState state, const std::string& checkpoint);

/// Closes round t: reference := policy recorded by training, t + 1.
/// Throws kStageOrder (PrematureRotation) unless round t is trained.
IterationState rotate_reference(IterationState state);

/// Drives the stages of each round against one gateway. Every stage writes
/// its artifacts with manifests under <run_dir>/round-<t>/ and then persists
/// state.json atomically, so an interrupted run resumes at the first stage
/// not recorded as complete.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, Gateway& gateway, std::shared_ptr<TrainerHook> trainer);

  const PipelineConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }
  const PromptForge& forge() const { return forge_; }

  std::filesystem::path state_path() const;
  std::filesystem::path round_dir(int t) const;

  /// Persisted state, or a fresh one when none exists.
  IterationState load_or_init() const;

  /// Student endpoint with "{policy}" bound to the round's checkpoint.
  EndpointProfile student_for(const IterationState& state) const;

  /// Runs exactly `stage` of round state.t. A completed stage is a no-op;
  /// a stage whose predecessor has not completed throws StageOrderViolation.
  IterationState run_stage(IterationState state, Stage stage);

  /// Runs the remaining stages of round state.t, stopping after `stop_after`
  /// when given. Without a trainer the round ends after emit with
  /// train_mode "external".
  IterationState run_iteration(IterationState state, std::optional<Stage> stop_after = {});

  /// Runs and rotates rounds until t == T, or until a round cannot be trained.
  IterationState run(IterationState state, std::optional<Stage> stop_after = {});

 private:
  void execute(IterationState& state, Stage stage);
  void stage_explore(IterationState& state);
  void stage_diagnose(IterationState& state);
  void stage_generate(IterationState& state);
  void stage_verify(IterationState& state);
  void stage_filter(IterationState& state);
  void stage_emit(IterationState& state);
  bool stage_train(IterationState& state);

  std::filesystem::path artifact(const IterationState& state, const std::string& name) const;
  std::vector<Json> read_artifact(const IterationState& state, const std::string& key) const;
  Manifest write(IterationState& state, const std::string& key, const std::vector<Json>& rows,
                 SourceHashes sources = {});
  void persist(const IterationState& state) const;

  PipelineConfig config_;
  Gateway& gateway_;
  std::shared_ptr<TrainerHook> trainer_;
  PromptForge forge_;
  Corpus corpus_;
};

}  // namespace blindspot
