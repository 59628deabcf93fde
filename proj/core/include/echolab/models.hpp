#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "echolab/grpo.hpp"
#include "echolab/rng.hpp"
#include "echolab/toyworld.hpp"

namespace echolab::models {

using toyworld::Trajectory;

// Per-query, per-position token preference table of shape [Q, L, V].
// The policy samples proposals position-wise from softmax(logits) and
// refinements from the same logits with the criticized token masked out.
class PolicyParams {
 public:
  PolicyParams(int num_queries, int seq_len, int vocab);

  double logit(int q, int i, int v) const { return w_[param_index(q, i, v)]; }
  double& logit(int q, int i, int v) { return w_[param_index(q, i, v)]; }

  std::size_t param_index(int q, int i, int v) const {
    return (static_cast<std::size_t>(q) * static_cast<std::size_t>(seq_len_) +
            static_cast<std::size_t>(i)) *
               static_cast<std::size_t>(vocab_) +
           static_cast<std::size_t>(v);
  }

  std::span<const double> flat() const { return w_; }
  std::span<double> flat() { return w_; }
  void assign_flat(std::span<const double> values);

  int num_queries() const { return num_queries_; }
  int seq_len() const { return seq_len_; }
  int vocab() const { return vocab_; }

  void validate() const;  // all entries finite

 private:
  int num_queries_, seq_len_, vocab_;
  std::vector<double> w_;
};

// Per-(query, position, observed-token) wrong-token logits of shape [Q, L, V]
// plus a scalar score bias. The flag probability for position i of a
// proposal is sigmoid(flag_logit[q][i][token_i] + score_bias * (1 - s_o)),
// so the critic conditions on both the observed token and the baseline score.
class CriticParams {
 public:
  CriticParams(int num_queries, int seq_len, int vocab);

  double flag_logit(int q, int i, int v) const { return w_[flag_index(q, i, v)]; }
  double& flag_logit(int q, int i, int v) { return w_[flag_index(q, i, v)]; }
  double score_bias() const { return w_.back(); }
  double& score_bias() { return w_.back(); }

  std::size_t flag_index(int q, int i, int v) const {
    return (static_cast<std::size_t>(q) * static_cast<std::size_t>(seq_len_) +
            static_cast<std::size_t>(i)) *
               static_cast<std::size_t>(vocab_) +
           static_cast<std::size_t>(v);
  }
  std::size_t bias_index() const { return w_.size() - 1; }

  std::span<const double> flat() const { return w_; }
  std::span<double> flat() { return w_; }
  void assign_flat(std::span<const double> values);

  int num_queries() const { return num_queries_; }
  int seq_len() const { return seq_len_; }
  int vocab() const { return vocab_; }

  void validate() const;

 private:
  int num_queries_, seq_len_, vocab_;
  std::vector<double> w_;  // Q*L*V flag logits followed by the score bias
};

// Per-position wrong-token flags with the log-probability of each flag
// decision. An all-false critique is the legitimate "nothing to fix" output.
struct Critique {
  std::vector<std::uint8_t> flags;     // 0 or 1 per position
  std::vector<double> flag_logprobs;   // log P(flags[i]) under the critic
};

// Deep copies for the "old" and "reference" snapshot roles.
inline PolicyParams snapshot(const PolicyParams& params) { return params; }
inline CriticParams snapshot(const CriticParams& params) { return params; }

// --- sampling ----------------------------------------------------------------

// Draws each position independently from softmax(logits[q][i][.]).
Trajectory policy_sample_proposal(const PolicyParams& params, int query_id, Rng& rng);

// Draws flag[i] ~ Bernoulli(sigmoid(flag_logit[q][i][token_i] + bias * (1 - s_o))).
Critique critic_sample(const CriticParams& params, int query_id, const Trajectory& proposal,
                       Score s_o, Rng& rng);

// Copies unflagged positions verbatim (log-probability exactly 0) and
// resamples flagged positions from the softmax over the vocabulary with the
// proposal's token removed, so a flagged token can never be reproduced.
Trajectory policy_sample_refinement(const PolicyParams& params, int query_id,
                                    const Trajectory& proposal, const Critique& critique,
                                    Rng& rng);

// --- exact log-probabilities and gradients ------------------------------------

// Sum of masked-softmax log-probabilities over flagged positions, with the
// exact gradient over the full parameter table. Copied positions contribute
// nothing. Throws if the refinement is structurally inconsistent with the
// (proposal, critique) pair.
std::pair<double, std::vector<double>> policy_logprob_and_grad(const PolicyParams& params,
                                                               int query_id,
                                                               const Trajectory& refinement,
                                                               const Trajectory& proposal,
                                                               const Critique& critique);

// Sum of Bernoulli log-probabilities over all positions, with the exact
// gradient over flag logits and the score bias.
std::pair<double, std::vector<double>> critic_logprob_and_grad(const CriticParams& params,
                                                               int query_id,
                                                               const Critique& critique,
                                                               const Trajectory& proposal,
                                                               Score s_o);

// --- track-sequence builders ---------------------------------------------------

// Masked-softmax tokens for the flagged positions of a refinement; the
// sequence's token count is the number of flags.
grpo::Sequence policy_track_sequence(const PolicyParams& params, int query_id,
                                     const Trajectory& proposal, const Critique& critique,
                                     const Trajectory& refinement);

// One two-way token per position of a critique.
grpo::Sequence critic_track_sequence(const CriticParams& params, int query_id,
                                     const Trajectory& proposal, Score s_o,
                                     const Critique& critique);

// Full-vocabulary tokens for every position of an unguided proposal (the
// plain group-relative baseline track).
grpo::Sequence proposal_track_sequence(const PolicyParams& params, int query_id,
                                       const Trajectory& proposal);

// --- persistence ---------------------------------------------------------------

// Text tensor dump: a fixed header (kind, shape, seed, step) followed by one
// row of %.17g values per (query, position). Byte-stable and exact on reload.
struct ParamsHeader {
  std::uint64_t seed = 0;
  int step = 0;
};

void save_policy_params(const PolicyParams& params, const ParamsHeader& header,
                        const std::string& path);
PolicyParams load_policy_params(const std::string& path, ParamsHeader* header = nullptr);

void save_critic_params(const CriticParams& params, const ParamsHeader& header,
                        const std::string& path);
CriticParams load_critic_params(const std::string& path, ParamsHeader* header = nullptr);

}  // namespace echolab::models
