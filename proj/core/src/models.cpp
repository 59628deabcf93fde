#include "echolab/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace echolab::models {

namespace {

void check_dims(int num_queries, int seq_len, int vocab) {
  if (num_queries < 1 || seq_len < 1 || vocab < 2) {
    throw std::invalid_argument("model params: need Q >= 1, L >= 1, V >= 2");
  }
}

// log(sigmoid(z)), stable for large |z|
double log_sigmoid(double z) {
  return std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z)));
}

// Samples an index from softmax(logits) restricted to `support`; returns the
// position within support and the log-probability of the draw.
template <typename LogitAt>
std::pair<int, double> sample_softmax(LogitAt logit_at, int support_size, Rng& rng) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < support_size; ++k) max_logit = std::max(max_logit, logit_at(k));
  double sum = 0.0;
  std::vector<double> exps(static_cast<std::size_t>(support_size));
  for (int k = 0; k < support_size; ++k) {
    exps[static_cast<std::size_t>(k)] = std::exp(logit_at(k) - max_logit);
    sum += exps[static_cast<std::size_t>(k)];
  }
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  int chosen = support_size - 1;
  for (int k = 0; k < support_size; ++k) {
    acc += exps[static_cast<std::size_t>(k)];
    if (u < acc) {
      chosen = k;
      break;
    }
  }
  const double logp = (logit_at(chosen) - max_logit) - std::log(sum);
  return {chosen, logp};
}

}  // namespace

PolicyParams::PolicyParams(int num_queries, int seq_len, int vocab)
    : num_queries_(num_queries), seq_len_(seq_len), vocab_(vocab) {
  check_dims(num_queries, seq_len, vocab);
  w_.assign(static_cast<std::size_t>(num_queries) * static_cast<std::size_t>(seq_len) *
                static_cast<std::size_t>(vocab),
            0.0);
}

void PolicyParams::assign_flat(std::span<const double> values) {
  if (values.size() != w_.size()) {
    throw std::invalid_argument("PolicyParams: flat size mismatch");
  }
  std::copy(values.begin(), values.end(), w_.begin());
}

void PolicyParams::validate() const {
  for (double v : w_) {
    if (!std::isfinite(v)) throw std::invalid_argument("PolicyParams: non-finite logit");
  }
}

CriticParams::CriticParams(int num_queries, int seq_len, int vocab)
    : num_queries_(num_queries), seq_len_(seq_len), vocab_(vocab) {
  check_dims(num_queries, seq_len, vocab);
  w_.assign(static_cast<std::size_t>(num_queries) * static_cast<std::size_t>(seq_len) *
                    static_cast<std::size_t>(vocab) +
                1,
            0.0);
}

void CriticParams::assign_flat(std::span<const double> values) {
  if (values.size() != w_.size()) {
    throw std::invalid_argument("CriticParams: flat size mismatch");
  }
  std::copy(values.begin(), values.end(), w_.begin());
}

void CriticParams::validate() const {
  for (double v : w_) {
    if (!std::isfinite(v)) throw std::invalid_argument("CriticParams: non-finite entry");
  }
}

Trajectory policy_sample_proposal(const PolicyParams& params, int query_id, Rng& rng) {
  if (query_id < 0 || query_id >= params.num_queries()) {
    throw std::invalid_argument("policy_sample_proposal: query_id out of range");
  }
  const int L = params.seq_len();
  const int V = params.vocab();
  Trajectory traj;
  traj.query_id = query_id;
  traj.tokens.resize(static_cast<std::size_t>(L));
  traj.token_logprobs.resize(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    auto [v, logp] = sample_softmax(
        [&](int k) { return params.logit(query_id, i, k); }, V, rng);
    traj.tokens[static_cast<std::size_t>(i)] = v;
    traj.token_logprobs[static_cast<std::size_t>(i)] = logp;
  }
  return traj;
}

Critique critic_sample(const CriticParams& params, int query_id, const Trajectory& proposal,
                       Score s_o, Rng& rng) {
  if (query_id < 0 || query_id >= params.num_queries()) {
    throw std::invalid_argument("critic_sample: query_id out of range");
  }
  const int L = params.seq_len();
  if (static_cast<int>(proposal.tokens.size()) != L) {
    throw std::invalid_argument("critic_sample: proposal length mismatch");
  }
  const double score_term = 1.0 - s_o.value();
  Critique critique;
  critique.flags.resize(static_cast<std::size_t>(L));
  critique.flag_logprobs.resize(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    const int tok = proposal.tokens[static_cast<std::size_t>(i)];
    const double z = params.flag_logit(query_id, i, tok) + params.score_bias() * score_term;
    const double p_flag = 1.0 / (1.0 + std::exp(-z));
    const bool flag = rng.uniform() < p_flag;
    critique.flags[static_cast<std::size_t>(i)] = flag ? 1 : 0;
    critique.flag_logprobs[static_cast<std::size_t>(i)] =
        flag ? log_sigmoid(z) : log_sigmoid(-z);
  }
  return critique;
}

Trajectory policy_sample_refinement(const PolicyParams& params, int query_id,
                                    const Trajectory& proposal, const Critique& critique,
                                    Rng& rng) {
  const int L = params.seq_len();
  const int V = params.vocab();
  if (static_cast<int>(proposal.tokens.size()) != L ||
      static_cast<int>(critique.flags.size()) != L) {
    throw std::invalid_argument("policy_sample_refinement: length mismatch");
  }
  Trajectory refinement;
  refinement.query_id = query_id;
  refinement.tokens.resize(static_cast<std::size_t>(L));
  refinement.token_logprobs.resize(static_cast<std::size_t>(L));
  std::vector<int> support;
  support.reserve(static_cast<std::size_t>(V - 1));
  for (int i = 0; i < L; ++i) {
    const int banned = proposal.tokens[static_cast<std::size_t>(i)];
    if (!critique.flags[static_cast<std::size_t>(i)]) {
      refinement.tokens[static_cast<std::size_t>(i)] = banned;
      refinement.token_logprobs[static_cast<std::size_t>(i)] = 0.0;
      continue;
    }
    support.clear();
    for (int v = 0; v < V; ++v) {
      if (v != banned) support.push_back(v);
    }
    auto [k, logp] = sample_softmax(
        [&](int idx) { return params.logit(query_id, i, support[static_cast<std::size_t>(idx)]); },
        static_cast<int>(support.size()), rng);
    refinement.tokens[static_cast<std::size_t>(i)] = support[static_cast<std::size_t>(k)];
    refinement.token_logprobs[static_cast<std::size_t>(i)] = logp;
  }
  return refinement;
}

std::pair<double, std::vector<double>> policy_logprob_and_grad(const PolicyParams& params,
                                                               int query_id,
                                                               const Trajectory& refinement,
                                                               const Trajectory& proposal,
                                                               const Critique& critique) {
  const int L = params.seq_len();
  const int V = params.vocab();
  if (static_cast<int>(refinement.tokens.size()) != L ||
      static_cast<int>(proposal.tokens.size()) != L ||
      static_cast<int>(critique.flags.size()) != L) {
    throw std::invalid_argument("policy_logprob_and_grad: length mismatch");
  }
  double logprob = 0.0;
  std::vector<double> grad(params.flat().size(), 0.0);
  std::vector<double> exps(static_cast<std::size_t>(V));
  for (int i = 0; i < L; ++i) {
    const int banned = proposal.tokens[static_cast<std::size_t>(i)];
    const int chosen = refinement.tokens[static_cast<std::size_t>(i)];
    if (!critique.flags[static_cast<std::size_t>(i)]) {
      if (chosen != banned) {
        throw std::invalid_argument(
            "policy_logprob_and_grad: refinement differs from proposal at unflagged position");
      }
      continue;
    }
    if (chosen == banned) {
      throw std::invalid_argument(
          "policy_logprob_and_grad: refinement reproduces the criticized token");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < V; ++v) {
      if (v != banned) max_logit = std::max(max_logit, params.logit(query_id, i, v));
    }
    double sum = 0.0;
    for (int v = 0; v < V; ++v) {
      if (v == banned) continue;
      exps[static_cast<std::size_t>(v)] = std::exp(params.logit(query_id, i, v) - max_logit);
      sum += exps[static_cast<std::size_t>(v)];
    }
    logprob += (params.logit(query_id, i, chosen) - max_logit) - std::log(sum);
    for (int v = 0; v < V; ++v) {
      if (v == banned) continue;
      const double p = exps[static_cast<std::size_t>(v)] / sum;
      grad[params.param_index(query_id, i, v)] += (v == chosen ? 1.0 : 0.0) - p;
    }
  }
  return {logprob, std::move(grad)};
}

std::pair<double, std::vector<double>> critic_logprob_and_grad(const CriticParams& params,
                                                               int query_id,
                                                               const Critique& critique,
                                                               const Trajectory& proposal,
                                                               Score s_o) {
  const int L = params.seq_len();
  if (static_cast<int>(critique.flags.size()) != L ||
      static_cast<int>(proposal.tokens.size()) != L) {
    throw std::invalid_argument("critic_logprob_and_grad: length mismatch");
  }
  const double score_term = 1.0 - s_o.value();
  double logprob = 0.0;
  std::vector<double> grad(params.flat().size(), 0.0);
  for (int i = 0; i < L; ++i) {
    const int tok = proposal.tokens[static_cast<std::size_t>(i)];
    const double z = params.flag_logit(query_id, i, tok) + params.score_bias() * score_term;
    const bool flag = critique.flags[static_cast<std::size_t>(i)] != 0;
    logprob += flag ? log_sigmoid(z) : log_sigmoid(-z);
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double residual = (flag ? 1.0 : 0.0) - p;
    grad[params.flag_index(query_id, i, tok)] += residual;
    grad[params.bias_index()] += residual * score_term;
  }
  return {logprob, std::move(grad)};
}

grpo::Sequence policy_track_sequence(const PolicyParams& params, int query_id,
                                     const Trajectory& proposal, const Critique& critique,
                                     const Trajectory& refinement) {
  const int L = params.seq_len();
  const int V = params.vocab();
  if (static_cast<int>(refinement.tokens.size()) != L ||
      static_cast<int>(proposal.tokens.size()) != L ||
      static_cast<int>(critique.flags.size()) != L) {
    throw std::invalid_argument("policy_track_sequence: length mismatch");
  }
  grpo::Sequence seq;
  for (int i = 0; i < L; ++i) {
    if (!critique.flags[static_cast<std::size_t>(i)]) continue;
    const int banned = proposal.tokens[static_cast<std::size_t>(i)];
    const int chosen = refinement.tokens[static_cast<std::size_t>(i)];
    grpo::Token token;
    token.outcomes.reserve(static_cast<std::size_t>(V - 1));
    for (int v = 0; v < V; ++v) {
      if (v == banned) continue;
      grpo::Outcome outcome;
      outcome.terms.push_back(
          {static_cast<std::uint32_t>(params.param_index(query_id, i, v)), 1.0});
      if (v == chosen) token.chosen = static_cast<std::uint32_t>(token.outcomes.size());
      token.outcomes.push_back(std::move(outcome));
    }
    seq.tokens.push_back(std::move(token));
  }
  return seq;
}

grpo::Sequence critic_track_sequence(const CriticParams& params, int query_id,
                                     const Trajectory& proposal, Score s_o,
                                     const Critique& critique) {
  const int L = params.seq_len();
  if (static_cast<int>(critique.flags.size()) != L ||
      static_cast<int>(proposal.tokens.size()) != L) {
    throw std::invalid_argument("critic_track_sequence: length mismatch");
  }
  const double score_term = 1.0 - s_o.value();
  grpo::Sequence seq;
  seq.tokens.reserve(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    const int tok = proposal.tokens[static_cast<std::size_t>(i)];
    grpo::Token token;
    grpo::Outcome flag_outcome;  // logit z = flag_logit + bias * (1 - s_o)
    flag_outcome.terms.push_back(
        {static_cast<std::uint32_t>(params.flag_index(query_id, i, tok)), 1.0});
    if (score_term != 0.0) {
      flag_outcome.terms.push_back(
          {static_cast<std::uint32_t>(params.bias_index()), score_term});
    }
    token.outcomes.push_back(std::move(flag_outcome));
    token.outcomes.emplace_back();  // "no flag" outcome, logit 0
    token.chosen = critique.flags[static_cast<std::size_t>(i)] ? 0u : 1u;
    seq.tokens.push_back(std::move(token));
  }
  return seq;
}

grpo::Sequence proposal_track_sequence(const PolicyParams& params, int query_id,
                                       const Trajectory& proposal) {
  const int L = params.seq_len();
  const int V = params.vocab();
  if (static_cast<int>(proposal.tokens.size()) != L) {
    throw std::invalid_argument("proposal_track_sequence: length mismatch");
  }
  grpo::Sequence seq;
  seq.tokens.reserve(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    grpo::Token token;
    token.outcomes.reserve(static_cast<std::size_t>(V));
    for (int v = 0; v < V; ++v) {
      grpo::Outcome outcome;
      outcome.terms.push_back(
          {static_cast<std::uint32_t>(params.param_index(query_id, i, v)), 1.0});
      token.outcomes.push_back(std::move(outcome));
    }
    token.chosen = static_cast<std::uint32_t>(proposal.tokens[static_cast<std::size_t>(i)]);
    seq.tokens.push_back(std::move(token));
  }
  return seq;
}

namespace {

void write_params(const char* kind, int num_queries, int seq_len, int vocab,
                  std::span<const double> table, const double* bias,
                  const ParamsHeader& header, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save params: cannot open '" + path + "'");
  out << "echolab-params v1\n";
  out << "kind " << kind << "\n";
  out << "shape " << num_queries << ' ' << seq_len << ' ' << vocab << "\n";
  out << "seed " << header.seed << "\n";
  out << "step " << header.step << "\n";
  char buf[32];
  std::size_t idx = 0;
  for (int q = 0; q < num_queries; ++q) {
    for (int i = 0; i < seq_len; ++i) {
      out << "row";
      for (int v = 0; v < vocab; ++v) {
        std::snprintf(buf, sizeof(buf), "%.17g", table[idx++]);
        out << ' ' << buf;
      }
      out << "\n";
    }
  }
  if (bias != nullptr) {
    std::snprintf(buf, sizeof(buf), "%.17g", *bias);
    out << "bias " << buf << "\n";
  }
  if (!out) throw std::runtime_error("save params: write failed for '" + path + "'");
}

struct ParsedParams {
  std::string kind;
  int num_queries = 0, seq_len = 0, vocab = 0;
  ParamsHeader header;
  std::vector<double> table;
  double bias = 0.0;
  bool has_bias = false;
};

ParsedParams read_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load params: cannot open '" + path + "'");
  ParsedParams p;
  std::string line;
  if (!std::getline(in, line) || line != "echolab-params v1") {
    throw std::runtime_error("load params: bad magic in '" + path + "'");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "kind") {
      ls >> p.kind;
    } else if (key == "shape") {
      ls >> p.num_queries >> p.seq_len >> p.vocab;
    } else if (key == "seed") {
      ls >> p.header.seed;
    } else if (key == "step") {
      ls >> p.header.step;
    } else if (key == "row") {
      double v;
      while (ls >> v) p.table.push_back(v);
    } else if (key == "bias") {
      ls >> p.bias;
      p.has_bias = true;
    } else {
      throw std::runtime_error("load params: unknown field '" + key + "'");
    }
  }
  const std::size_t expected = static_cast<std::size_t>(p.num_queries) *
                               static_cast<std::size_t>(p.seq_len) *
                               static_cast<std::size_t>(p.vocab);
  if (p.table.size() != expected) {
    throw std::runtime_error("load params: table size mismatch in '" + path + "'");
  }
  return p;
}

}  // namespace

void save_policy_params(const PolicyParams& params, const ParamsHeader& header,
                        const std::string& path) {
  write_params("policy", params.num_queries(), params.seq_len(), params.vocab(),
               params.flat(), nullptr, header, path);
}

PolicyParams load_policy_params(const std::string& path, ParamsHeader* header) {
  ParsedParams p = read_params(path);
  if (p.kind != "policy") throw std::runtime_error("load_policy_params: kind is not policy");
  PolicyParams params(p.num_queries, p.seq_len, p.vocab);
  params.assign_flat(p.table);
  params.validate();
  if (header != nullptr) *header = p.header;
  return params;
}

void save_critic_params(const CriticParams& params, const ParamsHeader& header,
                        const std::string& path) {
  const double bias = params.score_bias();
  write_params("critic", params.num_queries(), params.seq_len(), params.vocab(),
               params.flat().subspan(0, params.flat().size() - 1), &bias, header, path);
}

CriticParams load_critic_params(const std::string& path, ParamsHeader* header) {
  ParsedParams p = read_params(path);
  if (p.kind != "critic") throw std::runtime_error("load_critic_params: kind is not critic");
  if (!p.has_bias) throw std::runtime_error("load_critic_params: missing bias field");
  CriticParams params(p.num_queries, p.seq_len, p.vocab);
  p.table.push_back(p.bias);
  params.assign_flat(p.table);
  params.validate();
  if (header != nullptr) *header = p.header;
  return params;
}

}  // namespace echolab::models
