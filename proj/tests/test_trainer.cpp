#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "echolab/rng.hpp"
#include "echolab/trainer.hpp"

using echolab::Rng;
using namespace echolab::trainer;
namespace models = echolab::models;
namespace toyworld = echolab::toyworld;

namespace {

TrainConfig small_config(Mode mode, int steps, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.steps = steps;
  cfg.seed = seed;
  return cfg;
}

bool records_equal(const TrainRecord& a, const TrainRecord& b) {
  return a.step == b.step && a.mean_s_o == b.mean_s_o && a.mean_s_r == b.mean_s_r &&
         a.mean_gain == b.mean_gain && a.improvement_fraction == b.improvement_fraction &&
         a.policy_objective == b.policy_objective && a.critic_objective == b.critic_objective &&
         a.mean_kl_policy == b.mean_kl_policy && a.mean_kl_critic == b.mean_kl_critic &&
         a.clip_fraction == b.clip_fraction;
}

bool flats_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mode names round-trip and bad names are rejected") {
  for (Mode mode : {Mode::echo, Mode::frozen_critic, Mode::linear_reward, Mode::grpo_only}) {
    CHECK(mode_from_string(mode_to_string(mode)) == mode);
  }
  CHECK_THROWS_AS(mode_from_string("ppo"), std::invalid_argument);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config(Mode::echo, 1, 1).validate());
  TrainConfig bad = small_config(Mode::echo, -1, 1);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config(Mode::echo, 1, 1);
  bad.group_size = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config(Mode::echo, 1, 1);
  bad.shaping.eta = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero steps returns an empty record list at initialization") {
  const RunResult result = train_run(small_config(Mode::echo, 0, 3));
  CHECK(result.records.empty());
  for (double w : result.state.policy.flat()) CHECK(w == 0.0);
  for (double w : result.state.critic.flat()) CHECK(w == 0.0);
}

TEST_CASE("training is deterministic in the seed") {
  const auto a = train_run(small_config(Mode::echo, 10, 42));
  const auto b = train_run(small_config(Mode::echo, 10, 42));
  REQUIRE(a.records.size() == 10);
  REQUIRE(b.records.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(records_equal(a.records[i], b.records[i]));
  CHECK(flats_equal(a.state.policy.flat(), b.state.policy.flat()));
  CHECK(flats_equal(a.state.critic.flat(), b.state.critic.flat()));

  const auto c = train_run(small_config(Mode::echo, 10, 43));
  CHECK_FALSE(records_equal(a.records[0], c.records[0]));
}

TEST_CASE("modes share the step-0 world and initialization") {
  const auto echo = train_run(small_config(Mode::echo, 0, 9));
  const auto grpo = train_run(small_config(Mode::grpo_only, 0, 9));
  CHECK(echo.world.targets == grpo.world.targets);
  CHECK(flats_equal(echo.state.policy.flat(), grpo.state.policy.flat()));
}

TEST_CASE("echo mode advances both tracks on the same batch") {
  const auto result = train_run(small_config(Mode::echo, 3, 7));
  bool policy_moved = false, critic_moved = false;
  for (double w : result.state.policy.flat()) policy_moved = policy_moved || w != 0.0;
  for (double w : result.state.critic.flat()) critic_moved = critic_moved || w != 0.0;
  CHECK(policy_moved);
  CHECK(critic_moved);
}

TEST_CASE("frozen-critic mode never touches the critic") {
  const auto result = train_run(small_config(Mode::frozen_critic, 5, 7));
  for (double w : result.state.critic.flat()) CHECK(w == 0.0);
  bool policy_moved = false;
  for (double w : result.state.policy.flat()) policy_moved = policy_moved || w != 0.0;
  CHECK(policy_moved);
  for (const TrainRecord& r : result.records) {
    CHECK(r.critic_objective == 0.0);
    CHECK(r.mean_kl_critic == 0.0);
  }
}

TEST_CASE("grpo-only mode is independent of the critic parameters") {
  const toyworld::WorldSpec world = toyworld::make_world(4, 6, 8, 11);
  const TrainConfig cfg = small_config(Mode::grpo_only, 2, 11);

  TrainState state_a = make_initial_state(world);
  TrainState state_b = make_initial_state(world);
  Rng noise(123);
  for (double& w : state_b.critic.flat()) w = noise.uniform() * 10.0 - 5.0;
  state_b.critic_ref = state_b.critic;

  const Rng step_rng = Rng(cfg.seed).child(1).child(0);
  const auto [rec_a, trace_a] = train_step(world, state_a, cfg, 0, step_rng);
  const auto [rec_b, trace_b] = train_step(world, state_b, cfg, 0, step_rng);
  CHECK(records_equal(rec_a, rec_b));
  CHECK(flats_equal(state_a.policy.flat(), state_b.policy.flat()));
  CHECK(trace_a.groups.empty());
  CHECK_FALSE(trace_a.proposal_mismatches.empty());

  // the critic itself was not updated
  bool critic_b_unchanged = true;
  Rng replay(123);
  for (double w : state_b.critic.flat()) {
    critic_b_unchanged = critic_b_unchanged && w == replay.uniform() * 10.0 - 5.0;
  }
  CHECK(critic_b_unchanged);
}

TEST_CASE("a failing step leaves both parameter sets unchanged") {
  const toyworld::WorldSpec world = toyworld::make_world(4, 6, 8, 13);
  TrainConfig cfg = small_config(Mode::echo, 1, 13);
  cfg.grpo.learning_rate = 1e308;  // finite, but guarantees overflow on update
  cfg.grpo.inner_epochs = 2;

  TrainState state = make_initial_state(world);
  const TrainState before = state;
  const Rng step_rng = Rng(cfg.seed).child(1).child(0);
  CHECK_THROWS_AS(train_step(world, state, cfg, 0, step_rng), std::runtime_error);
  CHECK(flats_equal(state.policy.flat(), before.policy.flat()));
  CHECK(flats_equal(state.critic.flat(), before.critic.flat()));
}

TEST_CASE("train_run reports the failing step index") {
  TrainConfig cfg = small_config(Mode::echo, 3, 13);
  cfg.grpo.learning_rate = 1e308;
  try {
    train_run(cfg);
    FAIL("expected train_run to throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("evaluate") {
  const toyworld::WorldSpec world = toyworld::make_world(4, 6, 8, 17);

  SUBCASE("perfect policy scores one") {
    models::PolicyParams policy(8, 6, 4);
    for (int q = 0; q < 8; ++q) {
      for (int i = 0; i < 6; ++i) {
        policy.logit(q, i,
                     world.targets[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)]) =
            1000.0;
      }
    }
    CHECK(evaluate(world, policy, 100, Rng(1)) == 1.0);
  }

  SUBCASE("uniform policy matches the chance rate") {
    models::PolicyParams policy(8, 6, 4);
    const double mean = evaluate(world, policy, 10000, Rng(2));
    const double se = std::sqrt(0.25 * 0.75 / (6.0 * 10000.0));
    CHECK(std::abs(mean - 0.25) < 3.0 * se);
  }

  SUBCASE("deterministic under a fixed stream") {
    models::PolicyParams policy(8, 6, 4);
    CHECK(evaluate(world, policy, 500, Rng(3)) == evaluate(world, policy, 500, Rng(3)));
    CHECK_THROWS_AS(evaluate(world, policy, 0, Rng(3)), std::invalid_argument);
  }
}

TEST_CASE("records carry well-formed fields") {
  const auto result = train_run(small_config(Mode::echo, 8, 23));
  int expected_step = 0;
  for (const TrainRecord& r : result.records) {
    CHECK(r.step == expected_step++);
    CHECK(r.improvement_fraction >= 0.0);
    CHECK(r.improvement_fraction <= 1.0);
    CHECK(r.mean_s_o >= 0.0);
    CHECK(r.mean_s_o <= 1.0);
    CHECK(r.mean_s_r >= 0.0);
    CHECK(r.mean_s_r <= 1.0);
    CHECK(std::isfinite(r.policy_objective));
    CHECK(std::isfinite(r.critic_objective));
    CHECK(r.mean_kl_policy >= 0.0);
    CHECK(r.mean_kl_critic >= 0.0);
    CHECK(r.clip_fraction >= 0.0);
    CHECK(r.clip_fraction <= 1.0);
  }
}
