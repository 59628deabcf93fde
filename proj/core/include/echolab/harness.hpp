#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "echolab/rollout.hpp"
#include "echolab/trainer.hpp"

namespace echolab::harness {

inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr const char* kOutputRootEnvVar = "ECHO_LAB_OUT";
inline constexpr int kDefaultWindowSteps = 10;  // analysis window length in outer steps

// Fixed file names under a run's output directory.
struct RunPaths {
  std::string dir;
  std::string manifest;
  std::string metrics;
  std::string scatter;
  std::string drift;
  std::string world;
  std::string policy_params;
  std::string critic_params;
};

RunPaths run_paths(const std::string& out_dir);

// --- metrics stream -----------------------------------------------------------

// Appends one space-separated line in the fixed field order
//   step mean_s_o mean_s_r mean_gain improvement_fraction policy_objective
//   critic_objective mean_kl_policy mean_kl_critic clip_fraction
// with every real rendered at 9 significant digits. Throws on I/O failure,
// naming the step.
void emit_metrics(const trainer::TrainRecord& record, std::ostream& sink);

// --- failure-drift histograms ---------------------------------------------------

// Counts of failed proposals bucketed by mismatched-position count 0..L.
struct PhaseHistogram {
  std::string label;
  std::vector<std::int64_t> counts;

  std::int64_t total() const;
};

// Jensen-Shannon divergence (natural log) between the normalized histograms,
// in [0, ln 2]. Requires the same bucket space; errors if either histogram
// is empty.
double drift_divergence(const PhaseHistogram& h1, const PhaseHistogram& h2);

// --- analysis exports ------------------------------------------------------------

// Writes one (s_o, s_r) row per refinement from the window's cascades,
// skipping cascades whose proposal already scored 1. The header carries the
// window's step range.
void export_scatter(const std::vector<rollout::RolloutGroup>& window_groups, int first_step,
                    int last_step, const std::string& path);

struct ScatterData {
  int first_step = 0;
  int last_step = 0;
  std::vector<std::pair<double, double>> rows;  // (s_o, s_r)
};
ScatterData read_scatter(const std::string& path);

// Per-window failure histograms for a whole run plus the two summary
// divergences: window 0 vs window 1 (adjacent early windows) and window 0
// vs the final window.
struct DriftData {
  int window_steps = 0;
  int seq_len = 0;
  std::vector<PhaseHistogram> windows;          // labelled by window index
  std::vector<std::pair<int, int>> step_ranges;  // [first, last] per window
  double jsd_early_adjacent = 0.0;  // nan when undefined
  double jsd_early_late = 0.0;      // nan when undefined
};

void export_drift(const DriftData& data, const std::string& path);
DriftData read_drift(const std::string& path);

// --- run orchestration -------------------------------------------------------------

struct RunOptions {
  trainer::TrainConfig config{};
  std::string out_dir;
  std::string world_file;  // when set, reuse this world instead of generating one
  int window_steps = kDefaultWindowSteps;
};

struct RunArtifacts {
  trainer::RunResult result;
  RunPaths paths;
};

// Runs training and writes manifest, world, metrics stream, scatter export,
// drift export, and final parameter dumps under out_dir.
RunArtifacts run_with_outputs(const RunOptions& options);

// Flag-driven entry point (argv without the program name). Returns 0 on
// success; prints a diagnostic line to stderr and returns nonzero on failure.
int cli_run(const std::vector<std::string>& args);

}  // namespace echolab::harness
