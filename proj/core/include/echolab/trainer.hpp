#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "echolab/groups.hpp"
#include "echolab/grpo.hpp"
#include "echolab/models.hpp"
#include "echolab/rollout.hpp"
#include "echolab/rng.hpp"
#include "echolab/shaping.hpp"
#include "echolab/toyworld.hpp"

namespace echolab::trainer {

// Training variants:
//   echo          - synchronized dual-track updates (policy and critic)
//   frozen_critic - cascaded rollouts, but the critic is never updated
//   linear_reward - critic rewarded with the plain score delta s_r - s_o
//   grpo_only     - no critic at all; plain group-relative updates on
//                   unguided proposal groups of the same size
enum class Mode { echo, frozen_critic, linear_reward, grpo_only };

Mode mode_from_string(const std::string& name);
std::string mode_to_string(Mode mode);

struct TrainConfig {
  Mode mode = Mode::echo;
  int steps = 300;
  int batch_queries = 8;
  int group_size = 8;  // N critiques/refinements per cascade
  shaping::ShapingParams shaping{};
  grpo::GrpoConfig grpo{};
  std::uint64_t seed = 1;

  // toy world dimensions
  int vocab_size = 4;
  int seq_len = 6;
  int num_queries = 8;

  void validate() const;
};

// One metrics row per outer step.
struct TrainRecord {
  int step = 0;
  double mean_s_o = 0.0;
  double mean_s_r = 0.0;
  double mean_gain = 0.0;
  double improvement_fraction = 0.0;
  double policy_objective = 0.0;
  double critic_objective = 0.0;
  double mean_kl_policy = 0.0;
  double mean_kl_critic = 0.0;
  double clip_fraction = 0.0;
};

// Raw per-step material for analysis exports. groups is empty in grpo_only
// mode; proposal_mismatches holds the mismatched-position count of every
// proposal scored during the step.
struct StepTrace {
  std::vector<rollout::RolloutGroup> groups;
  std::vector<int> proposal_mismatches;
};

class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_step(const TrainRecord& record, const StepTrace& trace) = 0;
};

// Live parameters plus the fixed reference snapshots taken at step 0 (the
// KL anchors). The "old" snapshots of the surrogate are taken inside each
// step, immediately before the update.
struct TrainState {
  models::PolicyParams policy;
  models::CriticParams critic;
  models::PolicyParams policy_ref;
  models::CriticParams critic_ref;
};

TrainState make_initial_state(const toyworld::WorldSpec& world);

// One synchronized outer step. Updates state atomically: if anything throws,
// state is left exactly as it was.
std::pair<TrainRecord, StepTrace> train_step(const toyworld::WorldSpec& world,
                                             TrainState& state, const TrainConfig& cfg,
                                             int step_index, const Rng& step_rng);

struct RunResult {
  std::vector<TrainRecord> records;
  toyworld::WorldSpec world;
  TrainState state;
};

// Builds the world and initial parameters from cfg.seed, runs cfg.steps
// outer steps, and reports every record through the observer as it goes.
RunResult train_run(const TrainConfig& cfg, StepObserver* observer = nullptr);

// Same, reusing an existing world (its dimensions override cfg's).
RunResult train_run_with_world(const TrainConfig& cfg, const toyworld::WorldSpec& world,
                               StepObserver* observer = nullptr);

// Mean environment score of unguided proposals over num_episodes episodes,
// cycling through the queries round-robin. Pure read of the parameters.
double evaluate(const toyworld::WorldSpec& world, const models::PolicyParams& policy,
                int num_episodes, const Rng& rng);

}  // namespace echolab::trainer
