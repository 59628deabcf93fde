#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "echolab/rng.hpp"
#include "echolab/shaping.hpp"

namespace echolab::toyworld {

// The SequenceRepair world: Q hidden target sequences of length L over a
// vocabulary of V tokens. The reward model scores a trajectory by its
// fraction of positions matching the target, giving L+1 distinct score
// levels so near-ceiling behaviour is observable.
struct WorldSpec {
  int vocab_size = 0;   // V
  int seq_len = 0;      // L
  int num_queries = 0;  // Q
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> targets;  // Q rows of L token ids

  void validate() const;
};

// One sampled token sequence together with the log-probability each token
// had under the distribution that generated it. Deterministically copied
// tokens carry log-probability exactly 0.
struct Trajectory {
  int query_id = 0;
  std::vector<int> tokens;
  std::vector<double> token_logprobs;
  std::optional<Score> score;
};

// Draws the target table from a seeded stream; identical seeds give
// bitwise-identical worlds.
WorldSpec make_world(int vocab_size, int seq_len, int num_queries, std::uint64_t seed);

// Fraction of positions matching the hidden target, in {0, 1/L, ..., 1}.
Score env_score(const WorldSpec& spec, int query_id, const std::vector<int>& tokens);

// Plain-text key-value serialization (fields V, L, Q, seed, one target row
// per line). Byte-stable for a given world.
void save_world(const WorldSpec& spec, const std::string& path);
WorldSpec load_world(const std::string& path);

void write_world(const WorldSpec& spec, std::ostream& out);
WorldSpec read_world(std::istream& in);

}  // namespace echolab::toyworld
