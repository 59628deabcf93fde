#pragma once

#include <vector>

#include "echolab/rollout.hpp"
#include "echolab/shaping.hpp"

namespace echolab::groups {

// Raw group rewards next to their normalized advantages, index-aligned with
// the group member that produced each entry.
struct AdvantageGroup {
  std::vector<double> raw;
  std::vector<double> advantages;
};

// (x - mean) / population std. Groups whose population std falls below 1e-8
// carry no signal and normalize to all zeros. Errors on fewer than two
// entries or non-finite input.
std::vector<double> normalize_group(const std::vector<double>& raw);

// Advantages for the policy track: normalized refinement scores s_r.
std::vector<double> policy_advantages(const rollout::RolloutGroup& group);

// Advantages for the critic track: saturation-aware critic rewards
// r_c = critic_reward(s_o, s_r_j) normalized within the group.
std::vector<double> critic_advantages(const rollout::RolloutGroup& group,
                                      const shaping::ShapingParams& params);

// Same computations keeping the raw rewards alongside the advantages.
AdvantageGroup policy_advantage_group(const rollout::RolloutGroup& group);
AdvantageGroup critic_advantage_group(const rollout::RolloutGroup& group,
                                      const shaping::ShapingParams& params);

}  // namespace echolab::groups
