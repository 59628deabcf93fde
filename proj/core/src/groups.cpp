#include "echolab/groups.hpp"

#include <cmath>
#include <stdexcept>

namespace echolab::groups {

namespace {
constexpr double kDegenerateStd = 1e-8;
}

std::vector<double> normalize_group(const std::vector<double>& raw) {
  const std::size_t n = raw.size();
  if (n < 2) {
    throw std::invalid_argument("normalize_group: need at least 2 entries");
  }
  double mean = 0.0;
  for (double x : raw) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument("normalize_group: non-finite input");
    }
    mean += x;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : raw) {
    const double d = x - mean;
    var += d * d;
  }
  const double std_dev = std::sqrt(var / static_cast<double>(n));
  std::vector<double> advantages(n, 0.0);
  if (std_dev < kDegenerateStd) {
    return advantages;  // degenerate group: no signal
  }
  for (std::size_t i = 0; i < n; ++i) {
    advantages[i] = (raw[i] - mean) / std_dev;
  }
  return advantages;
}

AdvantageGroup policy_advantage_group(const rollout::RolloutGroup& group) {
  AdvantageGroup result;
  result.raw.reserve(group.group_size());
  for (const Score& s : group.s_r) result.raw.push_back(s.value());
  result.advantages = normalize_group(result.raw);
  return result;
}

AdvantageGroup critic_advantage_group(const rollout::RolloutGroup& group,
                                      const shaping::ShapingParams& params) {
  params.validate();
  AdvantageGroup result;
  result.raw.reserve(group.group_size());
  for (const Score& s : group.s_r) {
    result.raw.push_back(shaping::critic_reward(group.s_o, s, params));
  }
  result.advantages = normalize_group(result.raw);
  return result;
}

std::vector<double> policy_advantages(const rollout::RolloutGroup& group) {
  return policy_advantage_group(group).advantages;
}

std::vector<double> critic_advantages(const rollout::RolloutGroup& group,
                                      const shaping::ShapingParams& params) {
  return critic_advantage_group(group, params).advantages;
}

}  // namespace echolab::groups
