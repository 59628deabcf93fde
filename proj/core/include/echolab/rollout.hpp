#pragma once

#include <vector>

#include "echolab/models.hpp"
#include "echolab/rng.hpp"
#include "echolab/toyworld.hpp"

namespace echolab::rollout {

using models::Critique;
using toyworld::Trajectory;
using toyworld::WorldSpec;

// One cascade: the shared proposal with its baseline score, N independent
// critiques, and the refinement each critique elicited. critiques[j] and
// refinements[j] stay paired for advantage assignment.
struct RolloutGroup {
  int query_id = 0;
  Trajectory proposal;
  Score s_o{0.0};
  std::vector<Critique> critiques;
  std::vector<Trajectory> refinements;
  std::vector<Score> s_r;

  std::size_t group_size() const { return critiques.size(); }
};

struct GroupStats {
  double s_o = 0.0;
  double mean_s_r = 0.0;
  double max_s_r = 0.0;
  double improvement_fraction = 0.0;  // fraction of refinements with s_r > s_o
  double mean_flags = 0.0;            // flags per critique
};

// Runs one cascade: proposal, baseline score, N critiques conditioned on
// (query, proposal, s_o), N refinements each conditioned on its own
// critique, N refinement scores. Sub-streams are derived per stage and per
// group member, so the group is reproducible under any parallel schedule.
RolloutGroup run_cascade(const WorldSpec& world, const models::PolicyParams& policy,
                         const models::CriticParams& critic, int query_id, int group_size,
                         const Rng& rng);

// One cascade per query, with per-query streams derived from
// (rng_base, query index). num_workers > 1 evaluates queries on a small
// thread pool; results are identical for any worker count.
std::vector<RolloutGroup> run_batch(const WorldSpec& world, const models::PolicyParams& policy,
                                    const models::CriticParams& critic,
                                    const std::vector<int>& query_ids, int group_size,
                                    const Rng& rng_base, int num_workers = 1);

GroupStats group_stats(const RolloutGroup& group);

}  // namespace echolab::rollout
