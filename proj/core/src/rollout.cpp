#include "echolab/rollout.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <thread>

namespace echolab::rollout {

RolloutGroup run_cascade(const WorldSpec& world, const models::PolicyParams& policy,
                         const models::CriticParams& critic, int query_id, int group_size,
                         const Rng& rng) {
  if (group_size < 2) {
    throw std::invalid_argument("run_cascade: group_size must be >= 2");
  }
  const std::uint64_t n = static_cast<std::uint64_t>(group_size);

  RolloutGroup group;
  group.query_id = query_id;

  Rng proposal_rng = rng.child(0);
  group.proposal = models::policy_sample_proposal(policy, query_id, proposal_rng);
  group.s_o = toyworld::env_score(world, query_id, group.proposal.tokens);
  group.proposal.score = group.s_o;

  group.critiques.reserve(n);
  group.refinements.reserve(n);
  group.s_r.reserve(n);
  for (std::uint64_t j = 0; j < n; ++j) {
    Rng critic_rng = rng.child(1 + j);
    group.critiques.push_back(
        models::critic_sample(critic, query_id, group.proposal, group.s_o, critic_rng));
  }
  for (std::uint64_t j = 0; j < n; ++j) {
    Rng refine_rng = rng.child(1 + n + j);
    Trajectory refinement = models::policy_sample_refinement(
        policy, query_id, group.proposal, group.critiques[j], refine_rng);
    Score score = toyworld::env_score(world, query_id, refinement.tokens);
    refinement.score = score;
    group.refinements.push_back(std::move(refinement));
    group.s_r.push_back(score);
  }
  return group;
}

std::vector<RolloutGroup> run_batch(const WorldSpec& world, const models::PolicyParams& policy,
                                    const models::CriticParams& critic,
                                    const std::vector<int>& query_ids, int group_size,
                                    const Rng& rng_base, int num_workers) {
  if (query_ids.empty()) {
    throw std::invalid_argument("run_batch: empty query list");
  }
  std::vector<RolloutGroup> groups(query_ids.size());
  auto run_one = [&](std::size_t index) {
    groups[index] = run_cascade(world, policy, critic, query_ids[index], group_size,
                                rng_base.child(index));
  };

  if (num_workers <= 1 || query_ids.size() == 1) {
    for (std::size_t i = 0; i < query_ids.size(); ++i) run_one(i);
    return groups;
  }

  // Parameters and world are read-only here; each slot is written by exactly
  // one worker.
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(num_workers, static_cast<int>(query_ids.size()));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < query_ids.size(); i = next.fetch_add(1)) {
        run_one(i);
      }
    });
  }
  for (auto& t : pool) t.join();
  return groups;
}

GroupStats group_stats(const RolloutGroup& group) {
  GroupStats stats;
  stats.s_o = group.s_o.value();
  const std::size_t n = group.group_size();
  if (n == 0) return stats;
  double sum = 0.0, max_v = 0.0, improved = 0.0, flags = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = group.s_r[j].value();
    sum += v;
    max_v = std::max(max_v, v);
    if (v > stats.s_o) improved += 1.0;
    for (auto f : group.critiques[j].flags) flags += f ? 1.0 : 0.0;
  }
  stats.mean_s_r = sum / static_cast<double>(n);
  stats.max_s_r = max_v;
  stats.improvement_fraction = improved / static_cast<double>(n);
  stats.mean_flags = flags / static_cast<double>(n);
  return stats;
}

}  // namespace echolab::rollout
