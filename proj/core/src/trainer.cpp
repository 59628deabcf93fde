#include "echolab/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace echolab::trainer {

namespace {

// Stream tags under the per-step RNG. The per-run step streams hang off
// child(1) of the seed so they cannot collide with make_world's row streams,
// which hang off Rng(seed) directly.
constexpr std::uint64_t kRunStream = 1;
constexpr std::uint64_t kQueryPickStream = 0;
constexpr std::uint64_t kRolloutStream = 1;

std::vector<int> pick_queries(int batch_queries, int num_queries, const Rng& step_rng) {
  Rng rng = step_rng.child(kQueryPickStream);
  std::vector<int> ids(static_cast<std::size_t>(batch_queries));
  for (auto& id : ids) {
    id = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_queries)));
  }
  return ids;
}

int mismatch_count(const toyworld::WorldSpec& world, const Score& score) {
  return static_cast<int>(std::lround((1.0 - score.value()) * world.seq_len));
}

struct StepComputation {
  models::PolicyParams policy;
  models::CriticParams critic;
  TrainRecord record;
  StepTrace trace;
};

StepComputation cascade_step(const toyworld::WorldSpec& world, const TrainState& state,
                             const TrainConfig& cfg, int step_index, const Rng& step_rng) {
  StepComputation out{state.policy, state.critic, {}, {}};
  out.record.step = step_index;

  const std::vector<int> query_ids =
      pick_queries(cfg.batch_queries, world.num_queries, step_rng);
  out.trace.groups = rollout::run_batch(world, state.policy, state.critic, query_ids,
                                        cfg.group_size, step_rng.child(kRolloutStream));

  grpo::TrackBatch policy_batch;
  grpo::TrackBatch critic_batch;
  const bool update_critic = cfg.mode != Mode::frozen_critic;

  double sum_s_o = 0.0, sum_s_r = 0.0, sum_gain = 0.0, improved = 0.0;
  std::size_t refinement_count = 0;
  for (const rollout::RolloutGroup& group : out.trace.groups) {
    out.trace.proposal_mismatches.push_back(mismatch_count(world, group.s_o));
    sum_s_o += group.s_o.value();

    const std::vector<double> a_policy = groups::policy_advantages(group);

    // Critic rewards: saturation-aware gain by default, plain score delta in
    // the linear-reward ablation.
    std::vector<double> rewards(group.group_size());
    for (std::size_t j = 0; j < group.group_size(); ++j) {
      rewards[j] = cfg.mode == Mode::linear_reward
                       ? shaping::linear_gain(group.s_o, group.s_r[j])
                       : shaping::critic_reward(group.s_o, group.s_r[j], cfg.shaping);
    }
    const std::vector<double> a_critic = groups::normalize_group(rewards);

    for (std::size_t j = 0; j < group.group_size(); ++j) {
      sum_s_r += group.s_r[j].value();
      sum_gain += rewards[j];
      if (group.s_r[j].value() > group.s_o.value()) improved += 1.0;
      ++refinement_count;

      grpo::Sequence pseq = models::policy_track_sequence(
          state.policy, group.query_id, group.proposal, group.critiques[j],
          group.refinements[j]);
      pseq.advantage = a_policy[j];
      policy_batch.sequences.push_back(std::move(pseq));

      if (update_critic) {
        grpo::Sequence cseq = models::critic_track_sequence(
            state.critic, group.query_id, group.proposal, group.s_o, group.critiques[j]);
        cseq.advantage = a_critic[j];
        critic_batch.sequences.push_back(std::move(cseq));
      }
    }
  }

  const double n_groups = static_cast<double>(out.trace.groups.size());
  const double n_refine = static_cast<double>(refinement_count);
  out.record.mean_s_o = sum_s_o / n_groups;
  out.record.mean_s_r = sum_s_r / n_refine;
  out.record.mean_gain = sum_gain / n_refine;
  out.record.improvement_fraction = improved / n_refine;

  // Policy track first, by convention; both tracks consume log-probabilities
  // frozen before either update, so the order cannot leak.
  grpo::freeze_batch(policy_batch, state.policy.flat(), state.policy_ref.flat());
  grpo::UpdateResult policy_update =
      grpo::update_step(state.policy.flat(), policy_batch, cfg.grpo);
  out.policy.assign_flat(policy_update.params);
  out.record.policy_objective = policy_update.stats.objective;
  out.record.mean_kl_policy = policy_update.stats.mean_kl;
  out.record.clip_fraction = policy_update.stats.clip_fraction;

  if (update_critic) {
    grpo::freeze_batch(critic_batch, state.critic.flat(), state.critic_ref.flat());
    grpo::UpdateResult critic_update =
        grpo::update_step(state.critic.flat(), critic_batch, cfg.grpo);
    out.critic.assign_flat(critic_update.params);
    out.record.critic_objective = critic_update.stats.objective;
    out.record.mean_kl_critic = critic_update.stats.mean_kl;
  }
  return out;
}

StepComputation plain_grpo_step(const toyworld::WorldSpec& world, const TrainState& state,
                                const TrainConfig& cfg, int step_index, const Rng& step_rng) {
  StepComputation out{state.policy, state.critic, {}, {}};
  out.record.step = step_index;

  const std::vector<int> query_ids =
      pick_queries(cfg.batch_queries, world.num_queries, step_rng);
  const Rng rollout_rng = step_rng.child(kRolloutStream);

  grpo::TrackBatch policy_batch;
  double sum_score = 0.0;
  std::size_t proposal_count = 0;
  for (std::size_t k = 0; k < query_ids.size(); ++k) {
    const int query_id = query_ids[k];
    const Rng group_rng = rollout_rng.child(k);
    std::vector<double> scores(static_cast<std::size_t>(cfg.group_size));
    std::vector<grpo::Sequence> seqs;
    seqs.reserve(scores.size());
    for (int j = 0; j < cfg.group_size; ++j) {
      Rng sample_rng = group_rng.child(static_cast<std::uint64_t>(j));
      toyworld::Trajectory proposal =
          models::policy_sample_proposal(state.policy, query_id, sample_rng);
      const Score score = toyworld::env_score(world, query_id, proposal.tokens);
      proposal.score = score;
      scores[static_cast<std::size_t>(j)] = score.value();
      sum_score += score.value();
      ++proposal_count;
      out.trace.proposal_mismatches.push_back(mismatch_count(world, score));
      seqs.push_back(models::proposal_track_sequence(state.policy, query_id, proposal));
    }
    const std::vector<double> advantages = groups::normalize_group(scores);
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      seqs[j].advantage = advantages[j];
      policy_batch.sequences.push_back(std::move(seqs[j]));
    }
  }

  const double mean_score = sum_score / static_cast<double>(proposal_count);
  out.record.mean_s_o = mean_score;
  out.record.mean_s_r = mean_score;  // no refinements in this mode

  grpo::freeze_batch(policy_batch, state.policy.flat(), state.policy_ref.flat());
  grpo::UpdateResult update = grpo::update_step(state.policy.flat(), policy_batch, cfg.grpo);
  out.policy.assign_flat(update.params);
  out.record.policy_objective = update.stats.objective;
  out.record.mean_kl_policy = update.stats.mean_kl;
  out.record.clip_fraction = update.stats.clip_fraction;
  return out;
}

}  // namespace

Mode mode_from_string(const std::string& name) {
  if (name == "echo") return Mode::echo;
  if (name == "frozen-critic") return Mode::frozen_critic;
  if (name == "linear-reward") return Mode::linear_reward;
  if (name == "grpo-only") return Mode::grpo_only;
  throw std::invalid_argument("unknown mode '" + name + "'");
}

std::string mode_to_string(Mode mode) {
  switch (mode) {
    case Mode::echo: return "echo";
    case Mode::frozen_critic: return "frozen-critic";
    case Mode::linear_reward: return "linear-reward";
    case Mode::grpo_only: return "grpo-only";
  }
  throw std::invalid_argument("mode_to_string: invalid mode");
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch_queries < 1) throw std::invalid_argument("TrainConfig: batch_queries must be >= 1");
  if (group_size < 2) throw std::invalid_argument("TrainConfig: group_size must be >= 2");
  if (vocab_size < 2 || seq_len < 1 || num_queries < 1) {
    throw std::invalid_argument("TrainConfig: invalid world dimensions");
  }
  shaping.validate();
  grpo.validate();
}

TrainState make_initial_state(const toyworld::WorldSpec& world) {
  models::PolicyParams policy(world.num_queries, world.seq_len, world.vocab_size);
  models::CriticParams critic(world.num_queries, world.seq_len, world.vocab_size);
  return TrainState{policy, critic, policy, critic};
}

std::pair<TrainRecord, StepTrace> train_step(const toyworld::WorldSpec& world,
                                             TrainState& state, const TrainConfig& cfg,
                                             int step_index, const Rng& step_rng) {
  cfg.validate();
  StepComputation out = cfg.mode == Mode::grpo_only
                            ? plain_grpo_step(world, state, cfg, step_index, step_rng)
                            : cascade_step(world, state, cfg, step_index, step_rng);
  // Commit both parameter sets only after every update succeeded.
  state.policy = std::move(out.policy);
  state.critic = std::move(out.critic);
  return {out.record, std::move(out.trace)};
}

RunResult train_run_with_world(const TrainConfig& cfg, const toyworld::WorldSpec& world,
                               StepObserver* observer) {
  cfg.validate();
  world.validate();

  RunResult result{{}, world, make_initial_state(world)};
  result.records.reserve(static_cast<std::size_t>(cfg.steps));

  const Rng run_rng = Rng(cfg.seed).child(kRunStream);
  for (int step = 0; step < cfg.steps; ++step) {
    try {
      auto [record, trace] =
          train_step(result.world, result.state, cfg, step, run_rng.child(step));
      result.records.push_back(record);
      if (observer != nullptr) observer->on_step(record, trace);
    } catch (const std::exception& e) {
      throw std::runtime_error("train_run: step " + std::to_string(step) +
                               " failed: " + e.what());
    }
  }
  return result;
}

RunResult train_run(const TrainConfig& cfg, StepObserver* observer) {
  cfg.validate();
  const toyworld::WorldSpec world =
      toyworld::make_world(cfg.vocab_size, cfg.seq_len, cfg.num_queries, cfg.seed);
  return train_run_with_world(cfg, world, observer);
}

double evaluate(const toyworld::WorldSpec& world, const models::PolicyParams& policy,
                int num_episodes, const Rng& rng) {
  if (num_episodes < 1) throw std::invalid_argument("evaluate: num_episodes must be >= 1");
  double sum = 0.0;
  for (int e = 0; e < num_episodes; ++e) {
    const int query_id = e % world.num_queries;
    Rng episode_rng = rng.child(static_cast<std::uint64_t>(e));
    const toyworld::Trajectory proposal =
        models::policy_sample_proposal(policy, query_id, episode_rng);
    sum += toyworld::env_score(world, query_id, proposal.tokens).value();
  }
  return sum / static_cast<double>(num_episodes);
}

}  // namespace echolab::trainer
