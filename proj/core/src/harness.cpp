#include "echolab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"

namespace echolab::harness {

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

RunPaths run_paths(const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  RunPaths paths;
  paths.dir = out_dir;
  paths.manifest = (dir / "manifest.txt").string();
  paths.metrics = (dir / "metrics.txt").string();
  paths.scatter = (dir / "scatter.txt").string();
  paths.drift = (dir / "drift.txt").string();
  paths.world = (dir / "world.txt").string();
  paths.policy_params = (dir / "policy_params.txt").string();
  paths.critic_params = (dir / "critic_params.txt").string();
  return paths;
}

void emit_metrics(const trainer::TrainRecord& record, std::ostream& sink) {
  sink << record.step << ' ' << fmt9(record.mean_s_o) << ' ' << fmt9(record.mean_s_r) << ' '
       << fmt9(record.mean_gain) << ' ' << fmt9(record.improvement_fraction) << ' '
       << fmt9(record.policy_objective) << ' ' << fmt9(record.critic_objective) << ' '
       << fmt9(record.mean_kl_policy) << ' ' << fmt9(record.mean_kl_critic) << ' '
       << fmt9(record.clip_fraction) << '\n';
  if (!sink) {
    throw std::runtime_error("emit_metrics: write failed at step " +
                             std::to_string(record.step));
  }
}

std::int64_t PhaseHistogram::total() const {
  std::int64_t sum = 0;
  for (std::int64_t c : counts) sum += c;
  return sum;
}

double drift_divergence(const PhaseHistogram& h1, const PhaseHistogram& h2) {
  if (h1.counts.size() != h2.counts.size()) {
    throw std::invalid_argument("drift_divergence: bucket spaces differ");
  }
  const double n1 = static_cast<double>(h1.total());
  const double n2 = static_cast<double>(h2.total());
  if (n1 <= 0.0 || n2 <= 0.0) {
    throw std::invalid_argument("drift_divergence: empty histogram");
  }
  double jsd1 = 0.0;
  double jsd2 = 0.0;
  for (std::size_t i = 0; i < h1.counts.size(); ++i) {
    const double p = static_cast<double>(h1.counts[i]) / n1;
    const double q = static_cast<double>(h2.counts[i]) / n2;
    const double m = 0.5 * (p + q);
    if (p > 0.0) jsd1 += p * std::log(p / m);
    if (q > 0.0) jsd2 += q * std::log(q / m);
  }
  return 0.5 * jsd1 + 0.5 * jsd2;
}

void export_scatter(const std::vector<rollout::RolloutGroup>& window_groups, int first_step,
                    int last_step, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_scatter: cannot open '" + path + "'");
  out << "# scatter first_step " << first_step << " last_step " << last_step << "\n";
  for (const rollout::RolloutGroup& group : window_groups) {
    if (group.s_o.value() >= 1.0) continue;  // saturated cascades carry no refinement signal
    for (const Score& s_r : group.s_r) {
      out << fmt9(group.s_o.value()) << ' ' << fmt9(s_r.value()) << '\n';
    }
  }
  if (!out) throw std::runtime_error("export_scatter: write failed for '" + path + "'");
}

ScatterData read_scatter(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_scatter: cannot open '" + path + "'");
  ScatterData data;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_scatter: missing header");
  {
    std::istringstream ls(line);
    std::string hash, tag, key;
    ls >> hash >> tag >> key >> data.first_step;
    ls >> key >> data.last_step;
    if (hash != "#" || tag != "scatter" || ls.fail()) {
      throw std::runtime_error("read_scatter: malformed header '" + line + "'");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double s_o, s_r;
    ls >> s_o >> s_r;
    if (ls.fail()) throw std::runtime_error("read_scatter: malformed row '" + line + "'");
    data.rows.emplace_back(s_o, s_r);
  }
  return data;
}

void export_drift(const DriftData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_drift: cannot open '" + path + "'");
  out << "# drift seq_len " << data.seq_len << " window_steps " << data.window_steps << "\n";
  for (std::size_t w = 0; w < data.windows.size(); ++w) {
    out << "window " << w << ' ' << data.step_ranges[w].first << ' '
        << data.step_ranges[w].second;
    for (std::int64_t c : data.windows[w].counts) out << ' ' << c;
    out << '\n';
  }
  auto jsd_field = [](double v) { return std::isnan(v) ? std::string("nan") : fmt9(v); };
  out << "jsd early_adjacent " << jsd_field(data.jsd_early_adjacent) << '\n';
  out << "jsd early_late " << jsd_field(data.jsd_early_late) << '\n';
  if (!out) throw std::runtime_error("export_drift: write failed for '" + path + "'");
}

DriftData read_drift(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_drift: cannot open '" + path + "'");
  DriftData data;
  data.jsd_early_adjacent = std::numeric_limits<double>::quiet_NaN();
  data.jsd_early_late = std::numeric_limits<double>::quiet_NaN();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_drift: missing header");
  {
    std::istringstream ls(line);
    std::string hash, tag, key;
    ls >> hash >> tag >> key >> data.seq_len >> key >> data.window_steps;
    if (hash != "#" || tag != "drift" || ls.fail()) {
      throw std::runtime_error("read_drift: malformed header '" + line + "'");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "window") {
      std::size_t index;
      int first, last;
      ls >> index >> first >> last;
      PhaseHistogram hist;
      hist.label = "w" + std::to_string(index);
      std::int64_t c;
      while (ls >> c) hist.counts.push_back(c);
      data.windows.push_back(std::move(hist));
      data.step_ranges.emplace_back(first, last);
    } else if (key == "jsd") {
      std::string which, value;
      ls >> which >> value;
      const double v = value == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                      : std::stod(value);
      if (which == "early_adjacent") {
        data.jsd_early_adjacent = v;
      } else if (which == "early_late") {
        data.jsd_early_late = v;
      } else {
        throw std::runtime_error("read_drift: unknown jsd line '" + line + "'");
      }
    } else {
      throw std::runtime_error("read_drift: unknown field '" + key + "'");
    }
  }
  return data;
}

namespace {

// Streams metrics, accumulates per-window failure histograms, and retains
// the cascades of the trailing analysis window for the scatter export.
class RunCollector : public trainer::StepObserver {
 public:
  RunCollector(const std::string& metrics_path, int window_steps, int seq_len)
      : metrics_(metrics_path), window_steps_(window_steps), seq_len_(seq_len) {
    if (!metrics_) {
      throw std::runtime_error("cannot open metrics file '" + metrics_path + "'");
    }
  }

  void on_step(const trainer::TrainRecord& record, const trainer::StepTrace& trace) override {
    emit_metrics(record, metrics_);

    const std::size_t window = static_cast<std::size_t>(record.step / window_steps_);
    while (histograms_.size() <= window) {
      PhaseHistogram hist;
      hist.label = "w" + std::to_string(histograms_.size());
      hist.counts.assign(static_cast<std::size_t>(seq_len_) + 1, 0);
      histograms_.push_back(std::move(hist));
    }
    for (int mismatches : trace.proposal_mismatches) {
      if (mismatches >= 1) {
        ++histograms_[window].counts[static_cast<std::size_t>(mismatches)];
      }
    }

    recent_.emplace_back(record.step, trace.groups);
    while (recent_.size() > static_cast<std::size_t>(window_steps_)) recent_.pop_front();
    ++steps_seen_;
  }

  void finalize(const RunPaths& paths) {
    metrics_.flush();
    if (!metrics_) throw std::runtime_error("metrics flush failed");

    // scatter: the trailing window of cascades
    std::vector<rollout::RolloutGroup> window_groups;
    int first_step = steps_seen_ > 0 ? recent_.front().first : 0;
    int last_step = steps_seen_ - 1;
    for (const auto& [step, groups] : recent_) {
      window_groups.insert(window_groups.end(), groups.begin(), groups.end());
    }
    export_scatter(window_groups, first_step, last_step, paths.scatter);

    // drift: all windows plus the two summary divergences
    DriftData drift;
    drift.window_steps = window_steps_;
    drift.seq_len = seq_len_;
    drift.windows = histograms_;
    for (std::size_t w = 0; w < histograms_.size(); ++w) {
      const int first = static_cast<int>(w) * window_steps_;
      const int last = std::min(first + window_steps_, steps_seen_) - 1;
      drift.step_ranges.emplace_back(first, last);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    drift.jsd_early_adjacent = nan;
    drift.jsd_early_late = nan;
    if (drift.windows.size() >= 2) {
      const PhaseHistogram& early = drift.windows.front();
      const PhaseHistogram& adjacent = drift.windows[1];
      const PhaseHistogram& late = drift.windows.back();
      if (early.total() > 0 && adjacent.total() > 0) {
        drift.jsd_early_adjacent = drift_divergence(early, adjacent);
      }
      if (early.total() > 0 && late.total() > 0) {
        drift.jsd_early_late = drift_divergence(early, late);
      }
    }
    export_drift(drift, paths.drift);
  }

 private:
  std::ofstream metrics_;
  int window_steps_;
  int seq_len_;
  int steps_seen_ = 0;
  std::vector<PhaseHistogram> histograms_;
  std::deque<std::pair<int, std::vector<rollout::RolloutGroup>>> recent_;
};

void write_manifest(const RunOptions& options, const RunPaths& paths) {
  std::ofstream out(paths.manifest);
  if (!out) throw std::runtime_error("cannot open manifest file '" + paths.manifest + "'");
  const trainer::TrainConfig& cfg = options.config;
  out << "artifact echo-lab\n";
  out << "version " << kArtifactVersion << "\n";
  out << "start_time " << utc_timestamp() << "\n";
  out << "mode " << trainer::mode_to_string(cfg.mode) << "\n";
  out << "steps " << cfg.steps << "\n";
  out << "batch " << cfg.batch_queries << "\n";
  out << "group_size " << cfg.group_size << "\n";
  out << "eta " << fmt17(cfg.shaping.eta) << "\n";
  out << "lambda " << fmt17(cfg.shaping.lambda) << "\n";
  out << "clip_eps " << fmt17(cfg.grpo.clip_eps) << "\n";
  out << "kl_beta " << fmt17(cfg.grpo.kl_beta) << "\n";
  out << "lr " << fmt17(cfg.grpo.learning_rate) << "\n";
  out << "inner_epochs " << cfg.grpo.inner_epochs << "\n";
  out << "seed " << cfg.seed << "\n";
  out << "vocab_size " << cfg.vocab_size << "\n";
  out << "seq_len " << cfg.seq_len << "\n";
  out << "num_queries " << cfg.num_queries << "\n";
  out << "window_steps " << options.window_steps << "\n";
  out << "world " << paths.world << "\n";
  out << "metrics " << paths.metrics << "\n";
  out << "scatter " << paths.scatter << "\n";
  out << "drift " << paths.drift << "\n";
  out << "policy_params " << paths.policy_params << "\n";
  out << "critic_params " << paths.critic_params << "\n";
  if (!out) throw std::runtime_error("manifest write failed");
}

}  // namespace

RunArtifacts run_with_outputs(const RunOptions& options) {
  if (options.out_dir.empty()) {
    throw std::invalid_argument("run_with_outputs: output directory not set");
  }
  if (options.window_steps < 1) {
    throw std::invalid_argument("run_with_outputs: window_steps must be >= 1");
  }
  trainer::TrainConfig cfg = options.config;

  toyworld::WorldSpec world =
      options.world_file.empty()
          ? toyworld::make_world(cfg.vocab_size, cfg.seq_len, cfg.num_queries, cfg.seed)
          : toyworld::load_world(options.world_file);
  // keep the manifest's config echo truthful when a world file is reused
  cfg.vocab_size = world.vocab_size;
  cfg.seq_len = world.seq_len;
  cfg.num_queries = world.num_queries;
  cfg.validate();

  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory '" + options.out_dir +
                             "': " + ec.message());
  }
  const RunPaths paths = run_paths(options.out_dir);

  RunOptions echoed = options;
  echoed.config = cfg;
  write_manifest(echoed, paths);
  toyworld::save_world(world, paths.world);

  RunCollector collector(paths.metrics, options.window_steps, world.seq_len);
  trainer::RunResult result = trainer::train_run_with_world(cfg, world, &collector);
  collector.finalize(paths);

  const models::ParamsHeader header{cfg.seed, cfg.steps};
  models::save_policy_params(result.state.policy, header, paths.policy_params);
  models::save_critic_params(result.state.critic, header, paths.critic_params);

  return RunArtifacts{std::move(result), paths};
}

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"synchronized critic-policy co-evolution lab on a toy sequence-repair world"};

  std::string mode = "echo";
  trainer::TrainConfig cfg;
  std::string out_dir;
  std::string world_file;

  app.add_option("--mode", mode, "echo|frozen-critic|linear-reward|grpo-only")
      ->default_str("echo");
  app.add_option("--steps", cfg.steps, "outer training steps")->default_val(cfg.steps);
  app.add_option("--batch", cfg.batch_queries, "queries per step")
      ->default_val(cfg.batch_queries);
  app.add_option("--group-size", cfg.group_size, "critiques/refinements per cascade")
      ->default_val(cfg.group_size);
  app.add_option("--eta", cfg.shaping.eta, "barrier smoothing")->default_val(cfg.shaping.eta);
  app.add_option("--lambda", cfg.shaping.lambda, "negative-gain weight")
      ->default_val(cfg.shaping.lambda);
  app.add_option("--clip-eps", cfg.grpo.clip_eps, "ratio clip half-width")
      ->default_val(cfg.grpo.clip_eps);
  app.add_option("--kl-beta", cfg.grpo.kl_beta, "KL anchor weight")
      ->default_val(cfg.grpo.kl_beta);
  app.add_option("--lr", cfg.grpo.learning_rate, "learning rate for both tracks")
      ->default_val(cfg.grpo.learning_rate);
  app.add_option("--seed", cfg.seed, "run seed")->default_val(cfg.seed);
  app.add_option("--out", out_dir, "output directory (default: $ECHO_LAB_OUT)");
  app.add_option("--world", world_file, "reuse an existing world file");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("echo-lab");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    cfg.mode = trainer::mode_from_string(mode);
    if (out_dir.empty()) {
      const char* env = std::getenv(kOutputRootEnvVar);
      if (env == nullptr || *env == '\0') {
        throw std::invalid_argument("no output directory: pass --out or set " +
                                    std::string(kOutputRootEnvVar));
      }
      out_dir = env;
    }
    RunOptions options;
    options.config = cfg;
    options.out_dir = out_dir;
    options.world_file = world_file;
    RunArtifacts artifacts = run_with_outputs(options);
    std::printf("run complete: mode=%s steps=%d seed=%llu outputs=%s\n",
                trainer::mode_to_string(cfg.mode).c_str(), cfg.steps,
                static_cast<unsigned long long>(cfg.seed), artifacts.paths.dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "echo-lab: error: %s\n", e.what());
    return 1;
  }
}

}  // namespace echolab::harness
