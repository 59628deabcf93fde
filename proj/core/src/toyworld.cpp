#include "echolab/toyworld.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace echolab::toyworld {

void WorldSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("WorldSpec: vocab_size must be >= 2");
  if (seq_len < 1) throw std::invalid_argument("WorldSpec: seq_len must be >= 1");
  if (num_queries < 1) throw std::invalid_argument("WorldSpec: num_queries must be >= 1");
  if (static_cast<int>(targets.size()) != num_queries) {
    throw std::invalid_argument("WorldSpec: target table must have num_queries rows");
  }
  for (const auto& row : targets) {
    if (static_cast<int>(row.size()) != seq_len) {
      throw std::invalid_argument("WorldSpec: every target row must have seq_len tokens");
    }
    for (int t : row) {
      if (t < 0 || t >= vocab_size) {
        throw std::invalid_argument("WorldSpec: target token out of vocabulary range");
      }
    }
  }
}

WorldSpec make_world(int vocab_size, int seq_len, int num_queries, std::uint64_t seed) {
  if (vocab_size < 2) throw std::invalid_argument("make_world: vocab_size must be >= 2");
  if (seq_len < 1) throw std::invalid_argument("make_world: seq_len must be >= 1");
  if (num_queries < 1) throw std::invalid_argument("make_world: num_queries must be >= 1");

  WorldSpec spec;
  spec.vocab_size = vocab_size;
  spec.seq_len = seq_len;
  spec.num_queries = num_queries;
  spec.seed = seed;
  spec.targets.resize(num_queries);

  Rng rng(seed);
  for (int q = 0; q < num_queries; ++q) {
    Rng row_rng = rng.child(static_cast<std::uint64_t>(q));
    spec.targets[q].resize(seq_len);
    for (int i = 0; i < seq_len; ++i) {
      spec.targets[q][i] = static_cast<int>(row_rng.uniform_int(static_cast<std::uint64_t>(vocab_size)));
    }
  }
  return spec;
}

Score env_score(const WorldSpec& spec, int query_id, const std::vector<int>& tokens) {
  if (query_id < 0 || query_id >= spec.num_queries) {
    throw std::invalid_argument("env_score: query_id out of range");
  }
  if (static_cast<int>(tokens.size()) != spec.seq_len) {
    throw std::invalid_argument("env_score: trajectory length does not match seq_len");
  }
  const auto& target = spec.targets[query_id];
  int matches = 0;
  for (int i = 0; i < spec.seq_len; ++i) {
    if (tokens[i] < 0 || tokens[i] >= spec.vocab_size) {
      throw std::invalid_argument("env_score: token id out of vocabulary range");
    }
    if (tokens[i] == target[i]) ++matches;
  }
  return Score(static_cast<double>(matches) / static_cast<double>(spec.seq_len));
}

void write_world(const WorldSpec& spec, std::ostream& out) {
  out << "V " << spec.vocab_size << "\n";
  out << "L " << spec.seq_len << "\n";
  out << "Q " << spec.num_queries << "\n";
  out << "seed " << spec.seed << "\n";
  for (const auto& row : spec.targets) {
    out << "target";
    for (int t : row) out << ' ' << t;
    out << "\n";
  }
}

WorldSpec read_world(std::istream& in) {
  WorldSpec spec;
  std::string key;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "V") {
      ls >> spec.vocab_size;
    } else if (key == "L") {
      ls >> spec.seq_len;
    } else if (key == "Q") {
      ls >> spec.num_queries;
    } else if (key == "seed") {
      ls >> spec.seed;
    } else if (key == "target") {
      std::vector<int> row;
      int t;
      while (ls >> t) row.push_back(t);
      spec.targets.push_back(std::move(row));
    } else {
      throw std::runtime_error("read_world: unknown field '" + key + "'");
    }
    if (ls.fail() && key != "target") {
      throw std::runtime_error("read_world: malformed line '" + line + "'");
    }
  }
  spec.validate();
  return spec;
}

void save_world(const WorldSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_world: cannot open '" + path + "' for writing");
  write_world(spec, out);
  if (!out) throw std::runtime_error("save_world: write failed for '" + path + "'");
}

WorldSpec load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_world: cannot open '" + path + "'");
  return read_world(in);
}

}  // namespace echolab::toyworld
