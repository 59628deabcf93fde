#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace echolab::grpo {

struct GrpoConfig {
  double clip_eps = 0.2;      // ratio clip half-width
  double kl_beta = 0.01;      // weight of the KL anchor to the reference snapshot
  double learning_rate = 6.0; // ascent step size; the 1e-6 base rate scaled by 6e6
                              // so the tiny logit tables move within a few hundred steps
  int inner_epochs = 2;       // passes per update; ratios drift from 1 after the first

  void validate() const;
};

// ---------------------------------------------------------------------------
// Token model
//
// Every generated token, on either track, is a draw from a categorical
// distribution whose candidate logits are sparse affine functions of the
// parameter vector. A sampled sequence position is a token over the masked
// vocabulary (one parameter per candidate); a diagnostic flag is a two-way
// token with logits [w_flag + c * w_bias, 0]. Keeping that structure in the
// batch lets the surrogate recompute live log-probabilities and exact
// gradients each inner epoch without knowing which model produced the data.
// ---------------------------------------------------------------------------

struct LogitTerm {
  std::uint32_t param = 0;  // index into the flat parameter vector
  double coeff = 1.0;
};

struct Outcome {
  std::vector<LogitTerm> terms;  // logit = sum of coeff * params[param]; empty means logit 0
};

struct Token {
  std::vector<Outcome> outcomes;
  std::uint32_t chosen = 0;  // index into outcomes of the sampled outcome
};

// One generated sequence: its tokens, the sequence-level advantage, and the
// per-token log-probabilities under the live, old, and reference parameters.
struct Sequence {
  std::vector<Token> tokens;
  double advantage = 0.0;
  std::vector<double> logp_live;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;

  std::size_t token_count() const { return tokens.size(); }
};

struct TrackBatch {
  std::vector<Sequence> sequences;
};

// Diagnostics from one objective evaluation.
struct ObjectiveStats {
  double objective = 0.0;
  double mean_kl = 0.0;        // token-pooled mean of the KL estimator
  double clip_fraction = 0.0;  // fraction of tokens with ratio outside the band
  std::size_t total_tokens = 0;
};

// --- scalar pieces of the surrogate -----------------------------------------

// exp(logp_live - logp_old)
double token_ratio(double logp_live, double logp_old);

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)
double clipped_term(double ratio, double advantage, double eps);

// Nonnegative per-token KL estimator r - ln r - 1 with r = exp(logp_ref - logp_live).
double kl_token(double logp_live, double logp_ref);

// --- token evaluation --------------------------------------------------------

// Log-probability of the token's chosen outcome under `params`.
double token_logprob(const Token& token, std::span<const double> params);

// Accumulates scale * d(logprob)/d(params) into grad.
void token_grad(const Token& token, std::span<const double> params, double scale,
                std::span<double> grad);

// --- batch operations --------------------------------------------------------

// Fills logp_old and logp_ref from the given snapshots and initializes
// logp_live to the old values (live == old before the first inner epoch, so
// first-epoch ratios are exactly 1).
void freeze_batch(TrackBatch& batch, std::span<const double> old_params,
                  std::span<const double> ref_params);

// Recomputes logp_live for every token under `params`.
void refresh_live(TrackBatch& batch, std::span<const double> params);

// Mean over sequences of the token-averaged clipped term, minus
// kl_beta times the token-pooled mean KL. Sequences without tokens
// contribute to neither sum. Errors on an empty batch.
double surrogate_objective(const TrackBatch& batch, const GrpoConfig& cfg);

// Same reduction, plus the exact gradient with respect to `params`.
// Refreshes logp_live from `params` first. grad must have params.size() zeros
// or is overwritten.
ObjectiveStats objective_and_grad(TrackBatch& batch, std::span<const double> params,
                                  const GrpoConfig& cfg, std::vector<double>& grad);

// Runs cfg.inner_epochs gradient-ascent passes from `params`, recomputing
// live log-probabilities before each pass. Returns the updated parameters and
// the stats of the final pass. Throws if a gradient or an updated parameter
// is non-finite; the input vector is never modified.
struct UpdateResult {
  std::vector<double> params;
  ObjectiveStats stats;
};
UpdateResult update_step(std::span<const double> params, TrackBatch& batch,
                         const GrpoConfig& cfg);

}  // namespace echolab::grpo
