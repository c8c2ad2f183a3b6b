#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace difflm {

enum class ScheduleFamily { kLinear, kCosine };

std::string_view to_string(ScheduleFamily family);
ScheduleFamily parse_schedule_family(std::string_view name);

// Absorbing-state corruption schedule over integer timesteps 0..T.
//
// alpha(t) is the probability that a token is still unmasked after t forward
// steps; the masking ratio is 1 - alpha(t). alpha is the stored quantity and
// per-step survival beta(t) = alpha(t) / alpha(t-1) is derived from it.
// alpha(0) == 1 and alpha(T) == 0 exactly.
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, ScheduleFamily family);

  int steps() const { return steps_; }
  ScheduleFamily family() const { return family_; }

  double alpha(int t) const;
  double mask_ratio(int t) const { return 1.0 - alpha(t); }
  // Per-step survival probability, t in [1, T].
  double beta(int t) const;
  // Probability that a token masked at t is revealed at t-1:
  // (alpha(t-1) - alpha(t)) / (1 - alpha(t)), t in [1, T].
  double reveal_probability(int t) const;

  const std::vector<double>& alphas() const { return alpha_; }

 private:
  void check_timestep(int t, int lo) const;

  int steps_;
  ScheduleFamily family_;
  std::vector<double> alpha_;
};

NoiseSchedule build_schedule(int steps, ScheduleFamily family);

// Training weight for an example corrupted at timestep t: 1 - (t-1)/T.
double loss_weight(int t, int steps);

// Number of response positions left committed when the sampler sits at
// timestep t: floor(N * cos(pi t / 2T)).
int unmask_count(int length, int t, int steps);

struct UnmaskPlan {
  int length = 0;
  std::vector<int> counts;  // counts[t], t = 0..T
};

UnmaskPlan make_unmask_plan(int length, int steps);

}  // namespace difflm
