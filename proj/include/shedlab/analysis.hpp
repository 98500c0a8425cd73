#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "shedlab/blocks.hpp"
#include "shedlab/errors.hpp"
#include "shedlab/mask.hpp"
#include "shedlab/trace.hpp"

namespace shedlab {

/// Intersection-over-union of two kept sets with identical layout.
/// Both empty counts as 1.
inline double iou(const MaskState& a, const MaskState& b) {
  if (a.tensors.size() != b.tensors.size())
    throw StructuralError("iou: tensor counts differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t s = 0; s < a.tensors.size(); ++s) {
    const auto& ta = a.tensors[s];
    const auto& tb = b.tensors[s];
    if (ta.name != tb.name || ta.kept.size() != tb.kept.size())
      throw StructuralError("iou: layout mismatch at tensor '" + ta.name + "'");
    for (std::size_t k = 0; k < ta.kept.size(); ++k) {
      const bool ka = ta.kept[k] != 0, kb = tb.kept[k] != 0;
      inter += ka && kb;
      uni += ka || kb;
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// PMF of kept blocks' L0 norms over {0..4}, where L0 counts elements with
/// magnitude at or above the cutoff.
inline std::vector<double> kept_block_l0_pmf(const ParamStore& params, const BlockPartition& part,
                                             const MaskState& bmask, double cutoff = 6e-3) {
  if (bmask.tensors.size() != part.tensors.size())
    throw StructuralError("block mask does not match partition");
  std::vector<double> pmf(5, 0.0);
  std::size_t kept_blocks = 0;
  for (std::size_t slot = 0; slot < part.tensors.size(); ++slot) {
    const auto& tb = part.tensors[slot];
    const Tensor& value = params.at(tb.param_index).value;
    if (bmask.tensors[slot].kept.size() != tb.blocks.size())
      throw StructuralError("block mask does not match partition");
    for (std::size_t e = 0; e < tb.blocks.size(); ++e) {
      if (!bmask.tensors[slot].kept[e]) continue;
      pmf[block_l0(value, tb.blocks[e], cutoff)] += 1.0;
      ++kept_blocks;
    }
  }
  if (kept_blocks == 0) throw EmptyInputError("no kept blocks to histogram");
  for (double& p : pmf) p /= static_cast<double>(kept_blocks);
  return pmf;
}

struct FitResult {
  double asymptote = 0.0;   // estimated R_inf
  double time_constant = 0.0;
  double initial_value = 0.0;
  double residual_norm = 0.0;
  double r_squared = 0.0;
};

namespace detail {

struct ExpFitInput {
  std::vector<double> t, rho;
};

/// Log-linear fit of rho = R + (rho0 - R) exp(-t/tau) for a fixed asymptote
/// candidate. Returns residual norm in the original space, or +inf when the
/// candidate is infeasible (non-positive margin or non-decaying slope).
inline double try_asymptote(const ExpFitInput& in, double r_inf, FitResult* out) {
  const std::size_t n = in.t.size();
  double st = 0.0, sz = 0.0, stt = 0.0, stz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = in.rho[i] - r_inf;
    if (!(y > 0.0)) return std::numeric_limits<double>::infinity();
    const double z = std::log(y);
    st += in.t[i];
    sz += z;
    stt += in.t[i] * in.t[i];
    stz += in.t[i] * z;
  }
  const double denom = static_cast<double>(n) * stt - st * st;
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  const double slope = (static_cast<double>(n) * stz - st * sz) / denom;
  const double intercept = (sz - slope * st) / static_cast<double>(n);
  if (!(slope < 0.0)) return std::numeric_limits<double>::infinity();

  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double model = r_inf + std::exp(intercept + slope * in.t[i]);
    ss_res += (in.rho[i] - model) * (in.rho[i] - model);
  }
  if (out) {
    out->asymptote = r_inf;
    out->time_constant = -1.0 / slope;
    out->initial_value = r_inf + std::exp(intercept);
    out->residual_norm = std::sqrt(ss_res);
  }
  return std::sqrt(ss_res);
}

}  // namespace detail

/// Fits rho(t) = R_inf + (rho0 - R_inf) exp(-t/tau) to the actual keep-ratio
/// column. The asymptote is grid-searched with 200 points over [0, min rho]
/// and then refined locally; each candidate is resolved by log-linear
/// regression. Needs at least 4 rows and a non-constant trace.
inline FitResult fit_exponential(const RunTrace& trace) {
  detail::ExpFitInput in;
  for (const TraceRow& r : trace.rows) {
    in.t.push_back(r.t);
    in.rho.push_back(r.actual_keep);
  }
  if (in.t.size() < 4) throw DegenerateError("exponential fit needs at least 4 rows");
  const auto [lo, hi] = std::minmax_element(in.rho.begin(), in.rho.end());
  if (*lo == *hi) throw DegenerateError("constant keep-ratio trace; nothing to fit");

  const double min_rho = *lo;
  constexpr int kGrid = 200;
  double best_r = -1.0;
  double best_res = std::numeric_limits<double>::infinity();
  for (int j = 0; j < kGrid; ++j) {
    const double r = min_rho * static_cast<double>(j) / static_cast<double>(kGrid);
    const double res = detail::try_asymptote(in, r, nullptr);
    if (res < best_res) {
      best_res = res;
      best_r = r;
    }
  }
  if (!(best_res < std::numeric_limits<double>::infinity()))
    throw DegenerateError("no decaying exponential fits this trace");

  // Golden-section refinement between the neighbors of the best grid point.
  const double step = min_rho / static_cast<double>(kGrid);
  double a = std::max(0.0, best_r - step);
  double b = std::min(min_rho * (1.0 - 1e-12), best_r + step);
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
  double f1 = detail::try_asymptote(in, x1, nullptr);
  double f2 = detail::try_asymptote(in, x2, nullptr);
  for (int iter = 0; iter < 80; ++iter) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = detail::try_asymptote(in, x1, nullptr);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = detail::try_asymptote(in, x2, nullptr);
    }
  }
  FitResult fit;
  const double refined = f1 <= f2 ? x1 : x2;
  const double refined_res = detail::try_asymptote(in, refined, &fit);
  if (refined_res > best_res) detail::try_asymptote(in, best_r, &fit);

  double mean = 0.0;
  for (double v : in.rho) mean += v;
  mean /= static_cast<double>(in.rho.size());
  double ss_tot = 0.0;
  for (double v : in.rho) ss_tot += (v - mean) * (v - mean);
  fit.r_squared = ss_tot > 0.0 ? 1.0 - (fit.residual_norm * fit.residual_norm) / ss_tot : 0.0;
  return fit;
}

/// First differences of the cumulative pruning counters plus the cascade
/// ratio shed/explicit at the end of the trace.
struct ShedAttribution {
  std::vector<std::uint64_t> explicit_deltas;  // one per row transition
  std::vector<std::uint64_t> shed_deltas;
  double cascade_ratio = 0.0;  // +inf when explicit stays 0 while shed > 0
};

inline ShedAttribution shed_attribution(const RunTrace& trace) {
  if (trace.rows.empty()) throw EmptyInputError("empty trace");
  ShedAttribution out;
  for (std::size_t i = 1; i < trace.rows.size(); ++i) {
    const TraceRow& prev = trace.rows[i - 1];
    const TraceRow& cur = trace.rows[i];
    if (cur.explicit_cum < prev.explicit_cum || cur.shed_cum < prev.shed_cum)
      throw StructuralError("cumulative pruning counters decreased at row " + std::to_string(i));
    out.explicit_deltas.push_back(cur.explicit_cum - prev.explicit_cum);
    out.shed_deltas.push_back(cur.shed_cum - prev.shed_cum);
  }
  const TraceRow& last = trace.rows.back();
  if (last.explicit_cum == 0)
    out.cascade_ratio = last.shed_cum == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  else
    out.cascade_ratio = static_cast<double>(last.shed_cum) / static_cast<double>(last.explicit_cum);
  return out;
}

}  // namespace shedlab
