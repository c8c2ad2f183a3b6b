#include <stdexcept>
#include <cmath>

#include "difflm/schedule.hpp"
#include "doctest.h"

using namespace difflm;

TEST_SUITE("schedule") {
  TEST_CASE("linear alpha endpoints and midpoint") {
    const NoiseSchedule s(50, ScheduleFamily::kLinear);
    CHECK(s.alpha(0) == 1.0);
    CHECK(s.alpha(50) == 0.0);
    CHECK(s.alpha(25) == 0.5);
    CHECK(s.mask_ratio(25) == 0.5);
  }

  TEST_CASE("cosine alpha at T=4") {
    const NoiseSchedule s(4, ScheduleFamily::kCosine);
    CHECK(s.alpha(1) == doctest::Approx(0.92388).epsilon(1e-5));
    CHECK(s.alpha(0) == 1.0);
    CHECK(s.alpha(4) == 0.0);
  }

  TEST_CASE("alpha strictly decreasing and beta in [0,1)") {
    for (auto family : {ScheduleFamily::kLinear, ScheduleFamily::kCosine}) {
      for (int steps : {1, 2, 3, 4, 8, 50, 1000}) {
        const NoiseSchedule s(steps, family);
        for (int t = 1; t <= steps; ++t) {
          CHECK(s.alpha(t - 1) > s.alpha(t));
          CHECK(s.beta(t) >= 0.0);
          CHECK(s.beta(t) < 1.0);
        }
      }
    }
  }

  TEST_CASE("reveal probability") {
    const NoiseSchedule s(4, ScheduleFamily::kLinear);
    CHECK(s.reveal_probability(1) == 1.0);
    CHECK(s.reveal_probability(2) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.reveal_probability(4) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("loss weight examples") {
    CHECK(loss_weight(1, 50) == 1.0);
    CHECK(loss_weight(50, 50) == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(loss_weight(26, 50) == 0.5);
  }

  TEST_CASE("loss weight strictly decreasing and positive") {
    for (int steps : {1, 2, 7, 50, 1000}) {
      for (int t = 1; t <= steps; ++t) {
        CHECK(loss_weight(t, steps) > 0.0);
        if (t > 1) CHECK(loss_weight(t, steps) < loss_weight(t - 1, steps));
      }
    }
  }

  TEST_CASE("unmask count examples") {
    CHECK(unmask_count(10, 50, 50) == 0);
    CHECK(unmask_count(10, 0, 50) == 10);
    CHECK(unmask_count(10, 25, 50) == 7);
    CHECK(unmask_count(10, 2, 3) == 5);
    CHECK(unmask_count(7, 0, 1) == 7);
  }

  TEST_CASE("unmask count brackets N cos with extended precision") {
    // k = floor(N c) iff k <= N c < k + 1.
    for (int steps : {1, 3, 4, 50, 97, 1000}) {
      for (int n : {1, 2, 5, 10, 12, 64, 513, 4096}) {
        for (int t = 0; t <= steps; ++t) {
          const long double c =
              std::cos(3.141592653589793238462643383279502884L * t / (2.0L * steps));
          const long double x = n * c;
          const int k = unmask_count(n, t, steps);
          if (t == steps || 3 * t == 2 * steps || t == 0) continue;
          CHECK(static_cast<long double>(k) <= x);
          CHECK(x < static_cast<long double>(k) + 1.0L);
        }
      }
    }
  }

  TEST_CASE("unmask count nonincreasing with exact endpoints") {
    for (int steps = 1; steps <= 1000; steps += (steps < 60 ? 1 : 37)) {
      for (int n = 1; n <= 4096; n += (n < 40 ? 1 : 211)) {
        const UnmaskPlan plan = make_unmask_plan(n, steps);
        REQUIRE(plan.counts.size() == static_cast<size_t>(steps) + 1);
        CHECK(plan.counts.front() == n);
        CHECK(plan.counts.back() == 0);
        for (int t = 1; t <= steps; ++t) CHECK(plan.counts[t] <= plan.counts[t - 1]);
      }
    }
  }

  TEST_CASE("rejects bad arguments") {
    CHECK_THROWS_AS(NoiseSchedule(0, ScheduleFamily::kLinear), std::invalid_argument);
    const NoiseSchedule s(4, ScheduleFamily::kLinear);
    CHECK_THROWS_AS(s.alpha(5), std::out_of_range);
    CHECK_THROWS_AS(s.beta(0), std::out_of_range);
    CHECK_THROWS_AS(loss_weight(0, 4), std::out_of_range);
    CHECK_THROWS_AS(unmask_count(0, 1, 4), std::invalid_argument);
    CHECK_THROWS_AS(unmask_count(3, 5, 4), std::out_of_range);
    CHECK_THROWS_AS(parse_schedule_family("sqrt"), std::invalid_argument);
  }
}
