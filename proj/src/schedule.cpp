#include "difflm/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace difflm {

std::string_view to_string(ScheduleFamily family) {
  switch (family) {
    case ScheduleFamily::kLinear:
      return "linear";
    case ScheduleFamily::kCosine:
      return "cosine";
  }
  return "unknown";
}

ScheduleFamily parse_schedule_family(std::string_view name) {
  if (name == "linear") return ScheduleFamily::kLinear;
  if (name == "cosine") return ScheduleFamily::kCosine;
  throw std::invalid_argument("unknown schedule family '" + std::string(name) +
                              "' (expected linear|cosine)");
}

NoiseSchedule::NoiseSchedule(int steps, ScheduleFamily family)
    : steps_(steps), family_(family) {
  if (steps < 1) {
    throw std::invalid_argument("schedule needs at least one step, got " +
                                std::to_string(steps));
  }
  alpha_.resize(static_cast<size_t>(steps) + 1);
  const double total = static_cast<double>(steps);
  for (int t = 0; t <= steps; ++t) {
    const double frac = static_cast<double>(t) / total;
    alpha_[t] = family == ScheduleFamily::kLinear
                    ? 1.0 - frac
                    : std::cos(M_PI * static_cast<double>(t) / (2.0 * total));
  }
  alpha_.front() = 1.0;
  alpha_.back() = 0.0;
}

void NoiseSchedule::check_timestep(int t, int lo) const {
  if (t < lo || t > steps_) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [" +
                            std::to_string(lo) + ", " + std::to_string(steps_) +
                            "]");
  }
}

double NoiseSchedule::alpha(int t) const {
  check_timestep(t, 0);
  return alpha_[t];
}

double NoiseSchedule::beta(int t) const {
  check_timestep(t, 1);
  return alpha_[t] / alpha_[t - 1];
}

double NoiseSchedule::reveal_probability(int t) const {
  check_timestep(t, 1);
  return (alpha_[t - 1] - alpha_[t]) / (1.0 - alpha_[t]);
}

NoiseSchedule build_schedule(int steps, ScheduleFamily family) {
  return NoiseSchedule(steps, family);
}

double loss_weight(int t, int steps) {
  if (steps < 1) throw std::invalid_argument("steps must be positive");
  if (t < 1 || t > steps) {
    throw std::out_of_range("loss_weight: timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(steps) + "]");
  }
  return 1.0 - static_cast<double>(t - 1) / static_cast<double>(steps);
}

int unmask_count(int length, int t, int steps) {
  if (length < 1) throw std::invalid_argument("unmask_count: length must be >= 1");
  if (steps < 1) throw std::invalid_argument("unmask_count: steps must be >= 1");
  if (t < 0 || t > steps) {
    throw std::out_of_range("unmask_count: timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(steps) + "]");
  }
  // cos(pi t / 2T) is rational only at 1, 1/2 and 0 (t/T = 0, 2/3, 1); pin
  // those so rounding in cos() cannot push an exact product below an integer.
  if (t == 0) return length;
  if (t == steps) return 0;
  if (3 * t == 2 * steps) return length / 2;
  const double c = std::cos(M_PI * static_cast<double>(t) / (2.0 * steps));
  return static_cast<int>(std::floor(static_cast<double>(length) * c));
}

UnmaskPlan make_unmask_plan(int length, int steps) {
  UnmaskPlan plan;
  plan.length = length;
  plan.counts.resize(static_cast<size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) plan.counts[t] = unmask_count(length, t, steps);
  return plan;
}

}  // namespace difflm
