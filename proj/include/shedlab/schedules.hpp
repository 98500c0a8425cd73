#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "shedlab/errors.hpp"

namespace shedlab {

/// Position of a run in normalized training time. t = batch_index /
/// batches_per_epoch lives in [0, total_epochs).
struct RunClock {
  std::size_t batches_per_epoch = 1;
  std::size_t total_epochs = 35;
  std::size_t cycle_epochs = 7;
  std::size_t num_cycles = 5;
  std::size_t batch_index = 0;

  double time() const { return static_cast<double>(batch_index) / static_cast<double>(batches_per_epoch); }
};

enum class LrKind { three_step, cyclic };

/// Piecewise-constant learning rate. Each step is (epoch boundary, rate):
/// the rate applies while the epoch index is below the boundary. three_step
/// compares the absolute epoch index, cyclic compares the index modulo
/// cycle_epochs.
struct LrSchedule {
  LrKind kind = LrKind::three_step;
  std::size_t cycle_epochs = 7;
  std::vector<std::pair<std::size_t, double>> steps = default_three_step();

  static std::vector<std::pair<std::size_t, double>> default_three_step() {
    return {{11, 1e-2}, {23, 1e-3}, {35, 1e-4}};
  }
  static std::vector<std::pair<std::size_t, double>> default_cyclic() {
    return {{3, 1e-2}, {5, 1e-3}, {7, 1e-4}};
  }
  static LrSchedule three_step() { return LrSchedule{}; }
  static LrSchedule cyclic(std::size_t cycle_epochs = 7) {
    return LrSchedule{LrKind::cyclic, cycle_epochs, default_cyclic()};
  }
};

enum class KeepKind { linear, exponential, cycle_gated_exponential };

/// Target keep-ratio schedule. linear ramps from 1 to final_keep over
/// total_epochs; exponential decays toward final_keep with time constant
/// tau; the cycle-gated variant runs the exponential on effective time
/// that advances only during the first gate_epochs of each cycle.
struct KeepRatioSchedule {
  KeepKind kind = KeepKind::linear;
  double final_keep = 0.15;
  double tau = 3.0;
  double total_epochs = 35.0;
  std::size_t cycle_epochs = 7;
  std::size_t gate_epochs = 2;
};

namespace detail {

inline void check_lr_schedule(const LrSchedule& spec) {
  if (spec.steps.empty()) throw ValidationError("learning-rate schedule has no steps");
  std::size_t prev = 0;
  bool first = true;
  for (const auto& [boundary, rate] : spec.steps) {
    if (rate <= 0.0) throw ValidationError("learning-rate schedule rate must be positive");
    if (!first && boundary <= prev)
      throw ValidationError("learning-rate schedule boundaries must be strictly increasing");
    prev = boundary;
    first = false;
  }
  if (spec.kind == LrKind::cyclic) {
    if (spec.cycle_epochs == 0) throw ValidationError("cyclic learning-rate schedule needs cycle_epochs >= 1");
    if (spec.steps.back().first != spec.cycle_epochs)
      throw ValidationError("cyclic learning-rate buckets must cover the whole cycle");
  }
}

inline void check_keep_schedule(const KeepRatioSchedule& spec) {
  if (!(spec.final_keep > 0.0 && spec.final_keep <= 1.0))
    throw ValidationError("final keep-ratio must lie in (0, 1]");
  if (spec.kind != KeepKind::linear && !(spec.tau > 0.0))
    throw ValidationError("exponential keep-ratio schedule needs tau > 0");
  if (!(spec.total_epochs > 0.0)) throw ValidationError("keep-ratio schedule needs total_epochs > 0");
  if (spec.kind == KeepKind::cycle_gated_exponential) {
    if (spec.cycle_epochs == 0 || spec.gate_epochs == 0 || spec.gate_epochs > spec.cycle_epochs)
      throw ValidationError("gate must cover between 1 and cycle_epochs epochs");
  }
}

/// Cumulative time spent in the open-gate part of each cycle: the decay
/// budget advances during epochs {0..gate_epochs-1} of every cycle and is
/// held while the gate is closed.
inline double gated_effective_time(const KeepRatioSchedule& spec, double t) {
  const double cycle = static_cast<double>(spec.cycle_epochs);
  const double gate = static_cast<double>(spec.gate_epochs);
  const double completed = std::floor(t / cycle);
  const double in_cycle = t - completed * cycle;
  return completed * gate + std::min(in_cycle, gate);
}

}  // namespace detail

/// Learning rate at the clock's normalized time. Piecewise constant in the
/// epoch index.
inline double lr_value(const LrSchedule& spec, const RunClock& clock) {
  detail::check_lr_schedule(spec);
  const double t = clock.time();
  const double total = static_cast<double>(clock.total_epochs);
  if (!(t >= 0.0) || t >= total)
    throw RangeError("clock time " + std::to_string(t) + " outside [0, " + std::to_string(total) + ")");
  std::size_t epoch = static_cast<std::size_t>(std::floor(t));
  if (spec.kind == LrKind::cyclic) epoch %= spec.cycle_epochs;
  for (const auto& [boundary, rate] : spec.steps)
    if (epoch < boundary) return rate;
  throw RangeError("epoch " + std::to_string(epoch) + " beyond the last learning-rate boundary");
}

/// Target keep-ratio at normalized time t in [0, total_epochs].
inline double keep_ratio_value(const KeepRatioSchedule& spec, double t) {
  detail::check_keep_schedule(spec);
  if (!(t >= 0.0) || t > spec.total_epochs)
    throw RangeError("time " + std::to_string(t) + " outside [0, " + std::to_string(spec.total_epochs) + "]");
  switch (spec.kind) {
    case KeepKind::linear:
      // Algebraically 1 - (1 - R_f) * t / T, arranged so both endpoints
      // evaluate exactly in double precision.
      return spec.final_keep + (1.0 - spec.final_keep) * (1.0 - t / spec.total_epochs);
    case KeepKind::exponential:
      return spec.final_keep + (1.0 - spec.final_keep) * std::exp(-t / spec.tau);
    case KeepKind::cycle_gated_exponential: {
      const double t_eff = detail::gated_effective_time(spec, t);
      return spec.final_keep + (1.0 - spec.final_keep) * std::exp(-t_eff / spec.tau);
    }
  }
  throw ValidationError("unknown keep-ratio schedule kind");
}

/// d/dt (r_t - R_f) normalized by (r_t - R_f): -1/(T-t) for the linear
/// schedule, -1/tau for the exponential, and -1/tau gated by whether the
/// decay is currently advancing for the cycle-gated variant.
inline double normalized_pruning_rate(const KeepRatioSchedule& spec, double t) {
  detail::check_keep_schedule(spec);
  if (!(t >= 0.0) || t > spec.total_epochs)
    throw RangeError("time " + std::to_string(t) + " outside [0, " + std::to_string(spec.total_epochs) + "]");
  const double margin = keep_ratio_value(spec, t) - spec.final_keep;
  if (!(margin > 0.0))
    throw DegenerateError("keep-ratio schedule already at its asymptote; normalized rate undefined");
  switch (spec.kind) {
    case KeepKind::linear:
      if (t >= spec.total_epochs)
        throw DegenerateError("linear normalized pruning rate diverges at t = total_epochs");
      return -1.0 / (spec.total_epochs - t);
    case KeepKind::exponential:
      return -1.0 / spec.tau;
    case KeepKind::cycle_gated_exponential: {
      const double in_cycle = t - std::floor(t / static_cast<double>(spec.cycle_epochs)) *
                                      static_cast<double>(spec.cycle_epochs);
      return in_cycle < static_cast<double>(spec.gate_epochs) ? -1.0 / spec.tau : 0.0;
    }
  }
  throw ValidationError("unknown keep-ratio schedule kind");
}

}  // namespace shedlab
