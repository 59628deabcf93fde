#pragma once

#include <cmath>
#include <stdexcept>

namespace echolab {

// Scalar reward-model output, constrained to [0, 1].
class Score {
 public:
  explicit Score(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw std::invalid_argument("Score must lie in [0, 1]");
    }
  }

  double value() const { return value_; }

 private:
  double value_;
};

namespace shaping {

// eta smooths the barrier so the gain stays finite at score 1; lambda scales
// negative gains before group normalization (1 leaves them untouched).
struct ShapingParams {
  double eta = 0.1;
  double lambda = 1.0;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) {
      throw std::invalid_argument("ShapingParams: eta must be positive and finite");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("ShapingParams: lambda must be nonnegative and finite");
    }
  }
};

// Soft barrier weight 1 / (1 - s + eta). Strictly increasing on [0, 1],
// reaching 1/eta at s = 1.
inline double difficulty_weight(Score s, const ShapingParams& p) {
  return 1.0 / (1.0 - s.value() + p.eta);
}

// Path integral of the barrier weight from s_o to s_r:
//   ln((1 - s_o + eta) / (1 - s_r + eta)).
// Positive for improvements, negative for regressions, additive over
// intermediate scores.
inline double intrinsic_gain(Score s_o, Score s_r, const ShapingParams& p) {
  return std::log((1.0 - s_o.value() + p.eta) / (1.0 - s_r.value() + p.eta));
}

// Critic reward: the intrinsic gain, with the negative branch scaled by
// lambda. lambda = 1 is the plain gain.
inline double critic_reward(Score s_o, Score s_r, const ShapingParams& p) {
  const double g = intrinsic_gain(s_o, s_r, p);
  return g < 0.0 ? p.lambda * g : g;
}

// Linear improvement s_r - s_o. Baseline used by the linear-reward ablation;
// treats equal deltas the same everywhere on the score axis.
inline double linear_gain(Score s_o, Score s_r) {
  return s_r.value() - s_o.value();
}

}  // namespace shaping
}  // namespace echolab
