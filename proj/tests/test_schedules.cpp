#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "shedlab/schedules.hpp"

using namespace shedlab;

namespace {

RunClock clock_at(double t, std::size_t bpe = 1000, std::size_t total = 35) {
  RunClock c;
  c.batches_per_epoch = bpe;
  c.total_epochs = total;
  c.batch_index = static_cast<std::size_t>(std::llround(t * static_cast<double>(bpe)));
  return c;
}

// Independent closed-form references for the default schedules.
double three_step_reference(double t) {
  const double e = std::floor(t);
  if (e < 11.0) return 1e-2;
  if (e < 23.0) return 1e-3;
  return 1e-4;
}

double cyclic_reference(double t, double cycle) {
  const double e = std::fmod(std::floor(t), cycle);
  if (e < 3.0) return 1e-2;
  if (e < 5.0) return 1e-3;
  return 1e-4;
}

}  // namespace

TEST_CASE("three-step learning rate selects by epoch boundary") {
  const LrSchedule spec = LrSchedule::three_step();
  CHECK(lr_value(spec, clock_at(0.0)) == 1e-2);
  CHECK(lr_value(spec, clock_at(10.999)) == 1e-2);
  CHECK(lr_value(spec, clock_at(11.0)) == 1e-3);
  CHECK(lr_value(spec, clock_at(22.5)) == 1e-3);
  CHECK(lr_value(spec, clock_at(23.0)) == 1e-4);
  CHECK(lr_value(spec, clock_at(34.999)) == 1e-4);
}

TEST_CASE("cyclic learning rate selects by position within the cycle") {
  const LrSchedule spec = LrSchedule::cyclic(7);
  for (std::size_t cycle = 0; cycle < 5; ++cycle) {
    const double base = 7.0 * static_cast<double>(cycle);
    CHECK(lr_value(spec, clock_at(base + 0.5)) == 1e-2);
    CHECK(lr_value(spec, clock_at(base + 2.0)) == 1e-2);
    CHECK(lr_value(spec, clock_at(base + 3.0)) == 1e-3);
    CHECK(lr_value(spec, clock_at(base + 4.9)) == 1e-3);
    CHECK(lr_value(spec, clock_at(base + 6.0)) == 1e-4);
  }
}

TEST_CASE("learning rate matches closed forms on a dense grid") {
  const LrSchedule three = LrSchedule::three_step();
  const LrSchedule cyc = LrSchedule::cyclic(7);
  for (int i = 0; i < 1000; ++i) {
    const double t = 35.0 * (static_cast<double>(i) + 0.5) / 1000.0;
    const RunClock c = clock_at(t, 2000);
    CHECK(lr_value(three, c) == three_step_reference(c.time()));
    CHECK(lr_value(cyc, c) == cyclic_reference(c.time(), 7.0));
  }
}

TEST_CASE("cyclic learning rate has period cycle_epochs") {
  const LrSchedule spec = LrSchedule::cyclic(7);
  for (int i = 0; i < 400; ++i) {
    const double t = 28.0 * static_cast<double>(i) / 400.0;
    CHECK(lr_value(spec, clock_at(t, 100)) == lr_value(spec, clock_at(t + 7.0, 100)));
  }
}

TEST_CASE("learning rate clock range errors") {
  const LrSchedule spec = LrSchedule::three_step();
  RunClock c = clock_at(0.0);
  c.batch_index = 35 * c.batches_per_epoch;  // t == total_epochs
  CHECK_THROWS_AS(lr_value(spec, c), RangeError);

  // A clock whose run is longer than the last boundary is out of schedule.
  RunClock beyond = clock_at(36.0, 1000, 40);
  CHECK_THROWS_AS(lr_value(spec, beyond), RangeError);
}

TEST_CASE("learning rate schedule validation") {
  LrSchedule bad = LrSchedule::three_step();
  bad.steps[1].second = 0.0;
  CHECK_THROWS_AS(lr_value(bad, clock_at(0.0)), ValidationError);

  LrSchedule unordered = LrSchedule::three_step();
  unordered.steps[1].first = 11;
  CHECK_THROWS_AS(lr_value(unordered, clock_at(0.0)), ValidationError);
}

TEST_CASE("keep-ratio schedule values") {
  KeepRatioSchedule lin{KeepKind::linear, 0.15, 3.0, 35.0};
  CHECK(keep_ratio_value(lin, 0.0) == 1.0);
  CHECK(keep_ratio_value(lin, 17.5) == Catch::Approx(0.575).epsilon(1e-15));
  CHECK(keep_ratio_value(lin, 35.0) == 0.15);

  KeepRatioSchedule expo{KeepKind::exponential, 0.15, 3.0, 35.0};
  CHECK(keep_ratio_value(expo, 0.0) == 1.0);
  CHECK(keep_ratio_value(expo, 3.0) ==
        Catch::Approx(0.15 + 0.85 * std::exp(-1.0)).epsilon(1e-15));
}

TEST_CASE("keep-ratio matches closed forms on a dense grid") {
  const KeepRatioSchedule lin{KeepKind::linear, 0.15, 3.0, 35.0};
  const KeepRatioSchedule expo{KeepKind::exponential, 0.15, 3.0, 35.0};
  for (int i = 0; i <= 1000; ++i) {
    const double t = 35.0 * static_cast<double>(i) / 1000.0;
    const double lin_ref = 1.0 - 0.85 * t / 35.0;
    const double exp_ref = 0.15 + 0.85 * std::exp(-t / 3.0);
    CHECK(keep_ratio_value(lin, t) == Catch::Approx(lin_ref).epsilon(1e-12));
    CHECK(keep_ratio_value(expo, t) == Catch::Approx(exp_ref).epsilon(1e-12));
  }
}

TEST_CASE("keep-ratio is non-increasing and bounded for every kind") {
  const KeepRatioSchedule specs[] = {
      {KeepKind::linear, 0.15, 3.0, 35.0},
      {KeepKind::exponential, 0.2, 2.5, 35.0},
      {KeepKind::cycle_gated_exponential, 0.15, 3.0, 35.0, 7, 2},
  };
  for (const auto& spec : specs) {
    double prev = keep_ratio_value(spec, 0.0);
    CHECK(prev == 1.0);
    for (int i = 1; i <= 3500; ++i) {
      const double t = 35.0 * static_cast<double>(i) / 3500.0;
      const double r = keep_ratio_value(spec, t);
      CHECK(r <= prev);
      CHECK(r >= spec.final_keep);
      CHECK(r <= 1.0);
      prev = r;
    }
  }
}

TEST_CASE("cycle-gated exponential holds while the gate is closed") {
  const KeepRatioSchedule spec{KeepKind::cycle_gated_exponential, 0.15, 3.0, 35.0, 7, 2};
  // Inside the first cycle the gate is open for two epochs, then closed.
  const double at_gate_close = keep_ratio_value(spec, 2.0);
  CHECK(keep_ratio_value(spec, 2.0) == keep_ratio_value(spec, 4.5));
  CHECK(keep_ratio_value(spec, 6.999) == at_gate_close);
  // Decay resumes at the next cycle with the budget it left off at.
  CHECK(keep_ratio_value(spec, 7.5) < at_gate_close);
  const KeepRatioSchedule plain{KeepKind::exponential, 0.15, 3.0, 35.0};
  CHECK(keep_ratio_value(spec, 9.0) == keep_ratio_value(plain, 4.0));
}

TEST_CASE("cycle-gated equals plain exponential when the gate covers the cycle") {
  const KeepRatioSchedule gated{KeepKind::cycle_gated_exponential, 0.15, 3.0, 35.0, 7, 7};
  const KeepRatioSchedule plain{KeepKind::exponential, 0.15, 3.0, 35.0};
  for (int i = 0; i <= 700; ++i) {
    const double t = 35.0 * static_cast<double>(i) / 700.0;
    CHECK(keep_ratio_value(gated, t) == Catch::Approx(keep_ratio_value(plain, t)).epsilon(1e-14));
  }
}

TEST_CASE("keep-ratio range and validation errors") {
  const KeepRatioSchedule lin{KeepKind::linear, 0.15, 3.0, 35.0};
  CHECK_THROWS_AS(keep_ratio_value(lin, -0.1), RangeError);
  CHECK_THROWS_AS(keep_ratio_value(lin, 35.1), RangeError);

  KeepRatioSchedule bad = lin;
  bad.final_keep = 0.0;
  CHECK_THROWS_AS(keep_ratio_value(bad, 1.0), ValidationError);
  bad.final_keep = 1.5;
  CHECK_THROWS_AS(keep_ratio_value(bad, 1.0), ValidationError);

  KeepRatioSchedule bad_tau{KeepKind::exponential, 0.15, 0.0, 35.0};
  CHECK_THROWS_AS(keep_ratio_value(bad_tau, 1.0), ValidationError);
}

TEST_CASE("normalized pruning rate analytic values") {
  const KeepRatioSchedule lin{KeepKind::linear, 0.15, 3.0, 35.0};
  CHECK(normalized_pruning_rate(lin, 34.0) == Catch::Approx(-1.0).epsilon(1e-15));
  CHECK(normalized_pruning_rate(lin, 0.0) == Catch::Approx(-1.0 / 35.0).epsilon(1e-15));
  CHECK_THROWS_AS(normalized_pruning_rate(lin, 35.0), DegenerateError);

  const KeepRatioSchedule expo{KeepKind::exponential, 0.15, 3.0, 35.0};
  for (double t : {0.0, 1.0, 10.0, 34.0})
    CHECK(normalized_pruning_rate(expo, t) == Catch::Approx(-1.0 / 3.0).epsilon(1e-15));

  KeepRatioSchedule flat{KeepKind::exponential, 1.0, 3.0, 35.0};
  CHECK_THROWS_AS(normalized_pruning_rate(flat, 1.0), DegenerateError);
}

TEST_CASE("finite differences of the schedule match the rate identities") {
  const double h = 1e-4;
  const KeepRatioSchedule lin{KeepKind::linear, 0.15, 3.0, 35.0};
  const KeepRatioSchedule expo{KeepKind::exponential, 0.15, 3.0, 35.0};
  for (int i = 0; i <= 340; ++i) {
    const double t = 0.05 + 34.0 * static_cast<double>(i) / 340.0 * (34.0 - 0.1) / 34.0;
    for (const auto* spec : {&lin, &expo}) {
      const double r = keep_ratio_value(*spec, t);
      const double fd =
          (keep_ratio_value(*spec, t + h) - keep_ratio_value(*spec, t - h)) / (2.0 * h);
      const double normalized = fd / (r - spec->final_keep);
      CHECK(normalized ==
            Catch::Approx(normalized_pruning_rate(*spec, t)).epsilon(1e-6));
    }
  }
}
