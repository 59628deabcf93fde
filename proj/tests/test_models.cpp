#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "echolab/models.hpp"
#include "echolab/rng.hpp"
#include "echolab/toyworld.hpp"

using echolab::Rng;
using echolab::Score;
using namespace echolab::models;
namespace toyworld = echolab::toyworld;

namespace {

constexpr double kLnQuarter = -1.3862943611198906;
constexpr double kLnThird = -1.0986122886681098;
constexpr double kLnHalf = -0.6931471805599453;

PolicyParams random_policy(int q, int l, int v, Rng& rng, double scale = 1.0) {
  PolicyParams params(q, l, v);
  for (double& w : params.flat()) w = (rng.uniform() * 2.0 - 1.0) * scale;
  return params;
}

CriticParams random_critic(int q, int l, int v, Rng& rng, double scale = 1.0) {
  CriticParams params(q, l, v);
  for (double& w : params.flat()) w = (rng.uniform() * 2.0 - 1.0) * scale;
  return params;
}

// Central-difference oracle over a scalar function of a flat parameter
// vector. Returns the worst relative error against the analytic gradient.
double max_fd_rel_error(const std::function<double(std::span<const double>)>& f,
                        std::vector<double> params, const std::vector<double>& analytic,
                        double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double hi = f(params);
    params[i] = saved - h;
    const double lo = f(params);
    params[i] = saved;
    const double fd = (hi - lo) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("proposal sampling under uniform logits") {
  PolicyParams params(2, 3, 4);
  Rng rng(42);
  const auto traj = policy_sample_proposal(params, 1, rng);
  CHECK(traj.query_id == 1);
  CHECK(traj.tokens.size() == 3);
  for (double lp : traj.token_logprobs) {
    CHECK(lp == doctest::Approx(kLnQuarter).epsilon(1e-12));
  }
}

TEST_CASE("proposal sampling in the near-deterministic limit") {
  PolicyParams params(1, 2, 4);
  params.logit(0, 0, 2) = 1000.0;
  params.logit(0, 1, 3) = 1000.0;
  Rng rng(1);
  const auto traj = policy_sample_proposal(params, 0, rng);
  CHECK(traj.tokens[0] == 2);
  CHECK(traj.tokens[1] == 3);
  CHECK(traj.token_logprobs[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(traj.token_logprobs[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("empirical proposal frequencies match the softmax") {
  PolicyParams params(1, 1, 4);
  params.logit(0, 0, 0) = 0.3;
  params.logit(0, 0, 1) = -0.5;
  params.logit(0, 0, 2) = 1.1;
  params.logit(0, 0, 3) = 0.0;

  double z = 0.0;
  std::vector<double> probs(4);
  for (int v = 0; v < 4; ++v) z += std::exp(params.logit(0, 0, v));
  for (int v = 0; v < 4; ++v) probs[static_cast<std::size_t>(v)] = std::exp(params.logit(0, 0, v)) / z;

  const int n = 100000;
  std::vector<int> counts(4, 0);
  Rng rng(123);
  for (int k = 0; k < n; ++k) {
    const auto traj = policy_sample_proposal(params, 0, rng);
    counts[static_cast<std::size_t>(traj.tokens[0])]++;
  }
  for (int v = 0; v < 4; ++v) {
    const double p = probs[static_cast<std::size_t>(v)];
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(counts[static_cast<std::size_t>(v)] / static_cast<double>(n) - p) < 3.0 * se);
  }
}

TEST_CASE("critic sampling responds to logits and score bias") {
  Rng rng(9);
  toyworld::Trajectory proposal;
  proposal.query_id = 0;
  proposal.tokens = {0, 1, 2};
  proposal.token_logprobs = {0.0, 0.0, 0.0};

  SUBCASE("saturated negative logits never flag") {
    CriticParams params(1, 3, 4);
    for (double& w : params.flat()) w = -1000.0;
    params.score_bias() = 0.0;
    const auto critique = critic_sample(params, 0, proposal, Score(0.5), rng);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(critique.flags[i] == 0);
      CHECK(critique.flag_logprobs[i] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("zero logits flag with probability one half") {
    CriticParams params(1, 3, 4);
    int flagged = 0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
      const auto critique = critic_sample(params, 0, proposal, Score(0.5), rng);
      for (std::size_t i = 0; i < 3; ++i) {
        flagged += critique.flags[i];
        CHECK(critique.flag_logprobs[i] == doctest::Approx(kLnHalf).epsilon(1e-12));
      }
    }
    const double p = flagged / (3.0 * n);
    CHECK(std::abs(p - 0.5) < 3.0 * std::sqrt(0.25 / (3.0 * n)));
  }

  SUBCASE("at a perfect score the bias term vanishes") {
    CriticParams with_bias(1, 3, 4);
    with_bias.score_bias() = 5.0;
    CriticParams no_bias(1, 3, 4);
    Rng rng_a(77), rng_b(77);
    const auto a = critic_sample(with_bias, 0, proposal, Score(1.0), rng_a);
    const auto b = critic_sample(no_bias, 0, proposal, Score(1.0), rng_b);
    CHECK(a.flags == b.flags);
    CHECK(a.flag_logprobs == b.flag_logprobs);
  }
}

TEST_CASE("refinement copies unflagged positions and masks flagged ones") {
  PolicyParams params(1, 4, 4);
  toyworld::Trajectory proposal;
  proposal.query_id = 0;
  proposal.tokens = {0, 1, 2, 3};
  proposal.token_logprobs = {0, 0, 0, 0};

  SUBCASE("all-false critique is a pure copy") {
    Critique critique{{0, 0, 0, 0}, {0, 0, 0, 0}};
    Rng rng(3);
    const auto refinement = policy_sample_refinement(params, 0, proposal, critique, rng);
    CHECK(refinement.tokens == proposal.tokens);
    for (double lp : refinement.token_logprobs) CHECK(lp == 0.0);
  }

  SUBCASE("flagged position samples uniformly over the masked support") {
    Critique critique{{1, 0, 0, 0}, {0, 0, 0, 0}};
    Rng rng(4);
    std::vector<int> counts(4, 0);
    const int n = 30000;
    for (int k = 0; k < n; ++k) {
      const auto refinement = policy_sample_refinement(params, 0, proposal, critique, rng);
      counts[static_cast<std::size_t>(refinement.tokens[0])]++;
      CHECK(refinement.token_logprobs[0] == doctest::Approx(kLnThird).epsilon(1e-12));
    }
    CHECK(counts[0] == 0);  // proposal token is masked out
    for (int v = 1; v < 4; ++v) {
      const double p = counts[static_cast<std::size_t>(v)] / static_cast<double>(n);
      CHECK(std::abs(p - 1.0 / 3.0) < 3.0 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n));
    }
  }

  SUBCASE("flagging a correct token forces a regression at that position") {
    // target token == proposal token 0; the masked support cannot contain it
    Critique critique{{1, 0, 0, 0}, {0, 0, 0, 0}};
    Rng rng(5);
    for (int k = 0; k < 50; ++k) {
      const auto refinement = policy_sample_refinement(params, 0, proposal, critique, rng);
      CHECK(refinement.tokens[0] != proposal.tokens[0]);
    }
  }

  SUBCASE("binary vocabulary leaves a singleton support") {
    PolicyParams binary(1, 1, 2);
    toyworld::Trajectory prop;
    prop.tokens = {1};
    prop.token_logprobs = {0.0};
    Critique critique{{1}, {0.0}};
    Rng rng(6);
    const auto refinement = policy_sample_refinement(binary, 0, prop, critique, rng);
    CHECK(refinement.tokens[0] == 0);
    CHECK(refinement.token_logprobs[0] == 0.0);
  }
}

TEST_CASE("policy logprob and gradient") {
  SUBCASE("no flags means zero logprob and zero gradient") {
    PolicyParams params(1, 3, 4);
    toyworld::Trajectory proposal;
    proposal.tokens = {0, 1, 2};
    Critique critique{{0, 0, 0}, {0, 0, 0}};
    const auto [logp, grad] = policy_logprob_and_grad(params, 0, proposal, proposal, critique);
    CHECK(logp == 0.0);
    for (double g : grad) CHECK(g == 0.0);
  }

  SUBCASE("uniform masked support of size three") {
    PolicyParams params(1, 1, 4);
    toyworld::Trajectory proposal;
    proposal.tokens = {0};
    toyworld::Trajectory refinement;
    refinement.tokens = {2};
    Critique critique{{1}, {0.0}};
    const auto [logp, grad] = policy_logprob_and_grad(params, 0, refinement, proposal, critique);
    CHECK(logp == doctest::Approx(kLnThird).epsilon(1e-12));
    CHECK(grad[params.param_index(0, 0, 2)] == doctest::Approx(1.0 - 1.0 / 3.0).epsilon(1e-12));
    CHECK(grad[params.param_index(0, 0, 1)] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    CHECK(grad[params.param_index(0, 0, 3)] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    CHECK(grad[params.param_index(0, 0, 0)] == 0.0);  // masked-out token
  }

  SUBCASE("structural inconsistency is rejected") {
    PolicyParams params(1, 2, 4);
    toyworld::Trajectory proposal;
    proposal.tokens = {0, 1};
    Critique critique{{1, 0}, {0.0, 0.0}};
    toyworld::Trajectory tampered_copy;
    tampered_copy.tokens = {2, 3};  // differs at the unflagged position
    CHECK_THROWS_AS(policy_logprob_and_grad(params, 0, tampered_copy, proposal, critique),
                    std::invalid_argument);
    toyworld::Trajectory reproduces_banned;
    reproduces_banned.tokens = {0, 1};  // flagged position kept the banned token
    CHECK_THROWS_AS(policy_logprob_and_grad(params, 0, reproduces_banned, proposal, critique),
                    std::invalid_argument);
  }

  SUBCASE("finite differences confirm the analytic gradient") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
      PolicyParams params = random_policy(2, 4, 4, rng);
      const int q = static_cast<int>(rng.uniform_int(2));
      Rng sample_rng = rng.child(static_cast<std::uint64_t>(trial));
      const auto proposal = policy_sample_proposal(params, q, sample_rng);
      Critique critique;
      critique.flags.resize(4);
      critique.flag_logprobs.assign(4, 0.0);
      bool any = false;
      for (auto& f : critique.flags) {
        f = sample_rng.uniform() < 0.5 ? 1 : 0;
        any = any || f;
      }
      if (!any) critique.flags[0] = 1;
      const auto refinement =
          policy_sample_refinement(params, q, proposal, critique, sample_rng);
      const auto [logp, grad] = policy_logprob_and_grad(params, q, refinement, proposal, critique);

      auto eval = [&](std::span<const double> w) {
        PolicyParams probe(2, 4, 4);
        probe.assign_flat(w);
        return policy_logprob_and_grad(probe, q, refinement, proposal, critique).first;
      };
      const std::vector<double> flat(params.flat().begin(), params.flat().end());
      CHECK(max_fd_rel_error(eval, flat, grad) < 1e-5);
    }
  }
}

TEST_CASE("critic logprob and gradient") {
  SUBCASE("single flag at logit zero") {
    CriticParams params(1, 1, 4);
    toyworld::Trajectory proposal;
    proposal.tokens = {2};
    Critique flagged{{1}, {kLnHalf}};
    const auto [logp, grad] = critic_logprob_and_grad(params, 0, flagged, proposal, Score(1.0));
    CHECK(logp == doctest::Approx(kLnHalf).epsilon(1e-12));
    CHECK(grad[params.flag_index(0, 0, 2)] == doctest::Approx(0.5).epsilon(1e-12));

    Critique unflagged{{0}, {kLnHalf}};
    const auto [logp2, grad2] =
        critic_logprob_and_grad(params, 0, unflagged, proposal, Score(1.0));
    CHECK(logp2 == doctest::Approx(kLnHalf).epsilon(1e-12));
    CHECK(grad2[params.flag_index(0, 0, 2)] == doctest::Approx(-0.5).epsilon(1e-12));
  }

  SUBCASE("finite differences confirm the analytic gradient") {
    Rng rng(32);
    for (int trial = 0; trial < 100; ++trial) {
      CriticParams params = random_critic(2, 4, 4, rng);
      const int q = static_cast<int>(rng.uniform_int(2));
      Rng sample_rng = rng.child(static_cast<std::uint64_t>(trial));
      toyworld::Trajectory proposal;
      proposal.tokens.resize(4);
      for (int& t : proposal.tokens) t = static_cast<int>(sample_rng.uniform_int(4));
      const Score s_o(sample_rng.uniform());
      const auto critique = critic_sample(params, q, proposal, s_o, sample_rng);
      const auto [logp, grad] = critic_logprob_and_grad(params, q, critique, proposal, s_o);

      auto eval = [&](std::span<const double> w) {
        CriticParams probe(2, 4, 4);
        probe.assign_flat(w);
        return critic_logprob_and_grad(probe, q, critique, proposal, s_o).first;
      };
      const std::vector<double> flat(params.flat().begin(), params.flat().end());
      CHECK(max_fd_rel_error(eval, flat, grad) < 1e-5);
    }
  }
}

TEST_CASE("snapshots are deep, immutable copies") {
  Rng rng(55);
  PolicyParams live = random_policy(2, 3, 4, rng);
  const PolicyParams snap = snapshot(live);
  const PolicyParams snap_of_snap = snapshot(snap);
  const double before = snap.logit(0, 0, 0);
  live.logit(0, 0, 0) = 99.0;
  CHECK(snap.logit(0, 0, 0) == before);
  CHECK(snap_of_snap.logit(0, 0, 0) == before);

  toyworld::Trajectory proposal;
  proposal.tokens = {1, 2, 3};
  Critique critique{{1, 1, 0}, {0, 0, 0}};
  toyworld::Trajectory refinement;
  refinement.tokens = {0, 0, 3};
  const double lp_snap = policy_logprob_and_grad(snap, 0, refinement, proposal, critique).first;
  live.logit(0, 0, 0) = before;  // restore
  const double lp_live = policy_logprob_and_grad(live, 0, refinement, proposal, critique).first;
  CHECK(lp_snap == lp_live);
}

TEST_CASE("parameter dumps round-trip exactly") {
  Rng rng(66);
  const auto dir = std::filesystem::temp_directory_path();
  const auto policy_path = (dir / "echolab_policy_test.txt").string();
  const auto critic_path = (dir / "echolab_critic_test.txt").string();

  PolicyParams policy = random_policy(2, 3, 5, rng);
  save_policy_params(policy, {41, 17}, policy_path);
  ParamsHeader header;
  const PolicyParams loaded = load_policy_params(policy_path, &header);
  CHECK(header.seed == 41);
  CHECK(header.step == 17);
  CHECK(std::vector<double>(loaded.flat().begin(), loaded.flat().end()) ==
        std::vector<double>(policy.flat().begin(), policy.flat().end()));

  CriticParams critic = random_critic(2, 3, 5, rng);
  critic.score_bias() = -0.75;
  save_critic_params(critic, {42, 18}, critic_path);
  const CriticParams loaded_critic = load_critic_params(critic_path, nullptr);
  CHECK(std::vector<double>(loaded_critic.flat().begin(), loaded_critic.flat().end()) ==
        std::vector<double>(critic.flat().begin(), critic.flat().end()));

  // byte-stable: saving the reloaded params reproduces the file exactly
  const auto second_path = (dir / "echolab_policy_test2.txt").string();
  save_policy_params(loaded, {41, 17}, second_path);
  std::ifstream a(policy_path), b(second_path);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());

  CHECK_THROWS(load_policy_params(critic_path, nullptr));  // wrong kind
  CHECK_THROWS(load_critic_params(policy_path, nullptr));

  std::filesystem::remove(policy_path);
  std::filesystem::remove(critic_path);
  std::filesystem::remove(second_path);
}
