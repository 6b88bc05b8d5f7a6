#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elemental/envs.hpp"
#include "elemental/error.hpp"
#include "elemental/feedback.hpp"
#include "elemental/irl.hpp"
#include "elemental/llm.hpp"

namespace elemental {

enum class SelectionCriterion { kFeatureMatch, kGtSuccess };

struct Ablations {
  bool no_reflection = false;
  bool no_grad_norm = false;
  bool no_weight_norm = false;
  bool no_visual_input = false;
  bool text_demo = false;
};

// How demonstrations are produced when the config names no demo file.
struct DemoGenOptions {
  int count = 100;
  double temperature = 0.1;  // tabular soft-optimal expert
  TrainBudget budget;        // neural expert
  NeuralConfig neural;
  std::uint64_t seed = 0;
};

struct LlmSettings {
  GenerationOptions generation;
  HttpClientConfig http;
  std::optional<std::filesystem::path> mock_script;  // offline when set
};

struct RunConfig {
  std::string label;                       // row name in reports; defaults to the env id
  nlohmann::json env = "gridworld-5x5";    // registry id or config object
  std::vector<std::string> variants;       // applied after env construction
  std::optional<std::filesystem::path> demos;
  DemoGenOptions demo_gen;
  std::string task_description;
  LlmSettings llm;
  IrlHyper irl;
  int outer_iterations = 3;
  int samples_per_iteration = 3;
  std::vector<std::int64_t> seeds{0};
  Ablations ablations;
  SelectionCriterion selection = SelectionCriterion::kFeatureMatch;
  DemoPresentation presentation = DemoPresentation::kKeyframes;
  int keyframe_count = 4;
  bool superimpose_all_demos = true;  // false: only the first demonstration
  int eval_window = 100;
  int feedback_episodes = 100;
  int correlation_states = 500;
  std::filesystem::path output_dir = "runs/run";

  void validate() const;
  // Relative paths are resolved against base_dir.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  EnvPtr make_env() const;
};

// A run that could not finish; the message lists where artifacts were left.
class RunFailed : public Error {
 public:
  RunFailed(const std::string& message, std::filesystem::path run_dir)
      : Error(message + " (artifacts in " + run_dir.string() + ")"), run_dir_(std::move(run_dir)) {}
  const std::filesystem::path& run_dir() const { return run_dir_; }

 private:
  std::filesystem::path run_dir_;
};

// Soft-optimal expert under the environment's ground-truth reward.
DemonstrationSet generate_demonstrations(const Environment& env, const DemoGenOptions& options);

// Rolls out eval_episodes fresh episodes of `policy` and compares them with
// the demonstrations under `program`.
FeedbackReport make_feedback_report(const PolicyModel& policy, const DemonstrationSet& demos,
                                    const FeatureProgram& program, const RewardModel& reward,
                                    const Environment& env, int eval_episodes, const RngStream& rng,
                                    int eval_window = 100);

// mean_i |Phi_D,i - Phi_pi,i| / max(|Phi_D,i|, 1e-8).
double feature_match_loss(const FeatureCounts& demo, const FeatureCounts& policy);

// nullopt marks a failed candidate.
struct CandidateScore {
  std::optional<double> feature_match_loss;
  std::optional<double> success_metric;
};

// feature_match: smallest loss; gt_success: largest success. Ties go to the
// lowest index. Throws Error when every candidate failed.
std::size_t select_candidate(std::span<const CandidateScore> scores, SelectionCriterion criterion);

// `count` evenly spaced observations, one per line, fixed width with four
// decimals.
std::string format_text_demo(const Trajectory& traj, int count = 10);

struct Aggregate {
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  int count = 0;

  nlohmann::json to_json() const;
};

// Throws Error on an empty sample.
Aggregate aggregate(std::span<const double> values);

struct DiscardedCandidate {
  int iteration = 0;
  int candidate = 0;
  std::string reason;
};

struct SeedResult {
  std::int64_t seed = 0;
  double success_metric = 0.0;
  std::optional<double> reward_correlation;
  double relative_error = 0.0;
  double gt_return = 0.0;       // learned policy, mean undiscounted GT return per episode
  double demo_gt_return = 0.0;
  std::vector<std::string> chosen_programs;  // one per outer iteration
  std::vector<DiscardedCandidate> discarded;
  int outer_iterations_run = 0;
  IrlTrace trace;  // of the final chosen candidate

  nlohmann::json to_json() const;
};

struct ExperimentResult {
  std::string label;
  std::string env_id;
  std::vector<SeedResult> seeds;
  Aggregate success;
  std::optional<Aggregate> correlation;

  // Recomputes the aggregates from the per-seed entries.
  void finalize();
  nlohmann::json to_json() const;
  static ExperimentResult from_json(const nlohmann::json& j);
};

using ClientFactory = std::function<std::unique_ptr<LlmClient>(std::int64_t seed)>;

// The full loop for every seed. Writes artifacts under config.output_dir.
// Without a factory the client comes from config.llm (the mock restarts for
// each seed). Throws RunFailed when a seed cannot finish.
ExperimentResult run_elemental(const RunConfig& config, const ClientFactory& factory = {});

// ---- report ----

struct ReportRow {
  std::string label;
  std::string env_id;
  int seeds = 0;
  Aggregate success;
  std::optional<Aggregate> correlation;
};

// Loads <dir>/result.json for each dir and merges seeds that share a label.
std::vector<ReportRow> build_report(const std::vector<std::filesystem::path>& run_dirs);
std::string report_markdown(const std::vector<ReportRow>& rows);
std::string report_csv(const std::vector<ReportRow>& rows);

// The command-line entry point; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace elemental
