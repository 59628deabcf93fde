#include "echolab/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace echolab::grpo {

void GrpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("GrpoConfig: clip_eps must lie in (0, 1)");
  }
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) {
    throw std::invalid_argument("GrpoConfig: kl_beta must be nonnegative and finite");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("GrpoConfig: learning_rate must be positive and finite");
  }
  if (inner_epochs < 1) {
    throw std::invalid_argument("GrpoConfig: inner_epochs must be >= 1");
  }
}

double token_ratio(double logp_live, double logp_old) {
  return std::exp(logp_live - logp_old);
}

double clipped_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double kl_token(double logp_live, double logp_ref) {
  const double r = std::exp(logp_ref - logp_live);
  return r - (logp_ref - logp_live) - 1.0;
}

namespace {

double outcome_logit(const Outcome& o, std::span<const double> params) {
  double z = 0.0;
  for (const LogitTerm& t : o.terms) z += t.coeff * params[t.param];
  return z;
}

// Shared softmax scratch to avoid reallocation in hot loops.
thread_local std::vector<double> g_logits;

}  // namespace

double token_logprob(const Token& token, std::span<const double> params) {
  const std::size_t n = token.outcomes.size();
  g_logits.resize(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < n; ++o) {
    g_logits[o] = outcome_logit(token.outcomes[o], params);
    max_logit = std::max(max_logit, g_logits[o]);
  }
  double sum = 0.0;
  for (std::size_t o = 0; o < n; ++o) sum += std::exp(g_logits[o] - max_logit);
  return g_logits[token.chosen] - max_logit - std::log(sum);
}

void token_grad(const Token& token, std::span<const double> params, double scale,
                std::span<double> grad) {
  const std::size_t n = token.outcomes.size();
  g_logits.resize(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < n; ++o) {
    g_logits[o] = outcome_logit(token.outcomes[o], params);
    max_logit = std::max(max_logit, g_logits[o]);
  }
  double sum = 0.0;
  for (std::size_t o = 0; o < n; ++o) {
    g_logits[o] = std::exp(g_logits[o] - max_logit);
    sum += g_logits[o];
  }
  // d logp(chosen) / d logit_o = 1{o == chosen} - softmax_o
  for (std::size_t o = 0; o < n; ++o) {
    const double p = g_logits[o] / sum;
    const double w = scale * ((o == token.chosen ? 1.0 : 0.0) - p);
    for (const LogitTerm& t : token.outcomes[o].terms) {
      grad[t.param] += w * t.coeff;
    }
  }
}

void freeze_batch(TrackBatch& batch, std::span<const double> old_params,
                  std::span<const double> ref_params) {
  for (Sequence& seq : batch.sequences) {
    const std::size_t n = seq.tokens.size();
    seq.logp_old.resize(n);
    seq.logp_ref.resize(n);
    seq.logp_live.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      seq.logp_old[t] = token_logprob(seq.tokens[t], old_params);
      seq.logp_ref[t] = token_logprob(seq.tokens[t], ref_params);
      seq.logp_live[t] = seq.logp_old[t];
    }
  }
}

void refresh_live(TrackBatch& batch, std::span<const double> params) {
  for (Sequence& seq : batch.sequences) {
    seq.logp_live.resize(seq.tokens.size());
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      seq.logp_live[t] = token_logprob(seq.tokens[t], params);
    }
  }
}

namespace {

ObjectiveStats reduce_objective(const TrackBatch& batch, const GrpoConfig& cfg) {
  if (batch.sequences.empty()) {
    throw std::invalid_argument("surrogate_objective: empty batch");
  }
  const double n_seq = static_cast<double>(batch.sequences.size());
  double clip_sum = 0.0;
  double kl_sum = 0.0;
  std::size_t total_tokens = 0;
  std::size_t clipped_tokens = 0;
  for (const Sequence& seq : batch.sequences) {
    const std::size_t n = seq.tokens.size();
    if (n == 0) continue;  // all-copy refinement or empty critique: contributes nothing
    double seq_sum = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ratio = token_ratio(seq.logp_live[t], seq.logp_old[t]);
      seq_sum += clipped_term(ratio, seq.advantage, cfg.clip_eps);
      kl_sum += kl_token(seq.logp_live[t], seq.logp_ref[t]);
      if (ratio < 1.0 - cfg.clip_eps || ratio > 1.0 + cfg.clip_eps) ++clipped_tokens;
    }
    clip_sum += seq_sum / static_cast<double>(n);
    total_tokens += n;
  }
  ObjectiveStats stats;
  stats.total_tokens = total_tokens;
  stats.mean_kl = total_tokens > 0 ? kl_sum / static_cast<double>(total_tokens) : 0.0;
  stats.clip_fraction =
      total_tokens > 0 ? static_cast<double>(clipped_tokens) / static_cast<double>(total_tokens) : 0.0;
  stats.objective = clip_sum / n_seq;
  if (cfg.kl_beta != 0.0) stats.objective -= cfg.kl_beta * stats.mean_kl;
  return stats;
}

}  // namespace

double surrogate_objective(const TrackBatch& batch, const GrpoConfig& cfg) {
  return reduce_objective(batch, cfg).objective;
}

ObjectiveStats objective_and_grad(TrackBatch& batch, std::span<const double> params,
                                  const GrpoConfig& cfg, std::vector<double>& grad) {
  refresh_live(batch, params);
  const ObjectiveStats stats = reduce_objective(batch, cfg);

  grad.assign(params.size(), 0.0);
  const double n_seq = static_cast<double>(batch.sequences.size());
  const double total_tokens = static_cast<double>(stats.total_tokens);
  for (Sequence& seq : batch.sequences) {
    const std::size_t n = seq.tokens.size();
    if (n == 0) continue;
    for (std::size_t t = 0; t < n; ++t) {
      const double ratio = token_ratio(seq.logp_live[t], seq.logp_old[t]);
      const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      // min() takes the unclipped branch on ties, so the boundary subgradient
      // uses the unclipped slope.
      const bool unclipped_active = ratio * seq.advantage <= clipped * seq.advantage;
      double coeff = 0.0;
      if (unclipped_active) {
        coeff += seq.advantage * ratio / (n_seq * static_cast<double>(n));
      }
      if (cfg.kl_beta != 0.0 && total_tokens > 0.0) {
        const double r = std::exp(seq.logp_ref[t] - seq.logp_live[t]);
        // d(-beta * mean_kl)/d logp_live = beta * (r - 1) / total_tokens
        coeff += cfg.kl_beta * (r - 1.0) / total_tokens;
      }
      if (coeff != 0.0) token_grad(seq.tokens[t], params, coeff, grad);
    }
  }
  return stats;
}

UpdateResult update_step(std::span<const double> params, TrackBatch& batch,
                         const GrpoConfig& cfg) {
  cfg.validate();
  UpdateResult result;
  result.params.assign(params.begin(), params.end());
  std::vector<double> grad;
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    result.stats = objective_and_grad(batch, result.params, cfg, grad);
    for (double g : grad) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("update_step: non-finite gradient at inner epoch " +
                                 std::to_string(epoch));
      }
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      result.params[i] += cfg.learning_rate * grad[i];
      if (!std::isfinite(result.params[i])) {
        throw std::runtime_error("update_step: non-finite parameter at inner epoch " +
                                 std::to_string(epoch));
      }
    }
  }
  return result;
}

}  // namespace echolab::grpo
