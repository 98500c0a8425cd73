#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/mask.hpp"
#include "shedlab/optimizer.hpp"
#include "shedlab/params.hpp"
#include "shedlab/rng.hpp"

namespace shedlab {

namespace detail {

inline void prune_element(ParamStore& params, OptimizerState* opt, MaskState& mask,
                          std::size_t slot, std::size_t elem) {
  MaskState::TensorMask& tm = mask.tensors[slot];
  tm.kept[elem] = 0;
  params.at(tm.param_index).value.data[elem] = 0.0;
  if (opt) opt->velocity[tm.param_index].data[elem] = 0.0;
  --mask.kept_count;
}

/// Weights to remove so the kept count lands at or just under the target:
/// ceil((rho - r_target) * N), computed with a one-nanoweight guard against
/// floating-point edges on exact multiples.
inline std::size_t topup_count(const MaskState& mask, double r_target) {
  if (!(r_target > 0.0 && r_target <= 1.0)) throw RangeError("target keep-ratio must lie in (0, 1]");
  const double need = static_cast<double>(mask.kept_count) -
                      r_target * static_cast<double>(mask.total);
  if (need <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(need - 1e-9));
}

}  // namespace detail

/// Masks every kept weight whose magnitude fell strictly below the current
/// threshold, counts them as shed, and zeroes weights and velocities.
/// The threshold itself is untouched. Returns the newly shed global indices.
inline std::vector<std::size_t> detect_degenerate(ParamStore& params, MaskState& mask,
                                                  OptimizerState* opt = nullptr) {
  std::vector<std::size_t> shed_now;
  for (std::size_t slot = 0; slot < mask.tensors.size(); ++slot) {
    MaskState::TensorMask& tm = mask.tensors[slot];
    const Tensor& value = params.at(tm.param_index).value;
    for (std::size_t k = 0; k < tm.kept.size(); ++k) {
      if (!tm.kept[k]) continue;
      if (std::fabs(value.data[k]) < mask.threshold) {
        detail::prune_element(params, opt, mask, slot, k);
        shed_now.push_back(tm.global_offset + k);
      }
    }
  }
  mask.shed += shed_now.size();
  if (!shed_now.empty()) params.touch();
  return shed_now;
}

/// Global magnitude top-up: if the actual keep-ratio exceeds the target,
/// mask the globally smallest-magnitude kept weights (ties to the lower
/// flat index) until it does not, then raise the threshold to the largest
/// magnitude pruned so far. Returns the pruned global indices.
inline std::vector<std::size_t> gmp_topup(ParamStore& params, MaskState& mask, double r_target,
                                          OptimizerState* opt = nullptr) {
  const std::size_t k = detail::topup_count(mask, r_target);
  if (k == 0) return {};

  std::vector<std::pair<double, std::size_t>> kept;  // (|w|, global index)
  kept.reserve(mask.kept_count);
  for (const auto& tm : mask.tensors) {
    const Tensor& value = params.at(tm.param_index).value;
    for (std::size_t e = 0; e < tm.kept.size(); ++e)
      if (tm.kept[e]) kept.emplace_back(std::fabs(value.data[e]), tm.global_offset + e);
  }
  std::nth_element(kept.begin(), kept.begin() + (k - 1), kept.end());
  std::sort(kept.begin(), kept.begin() + k);

  std::vector<std::size_t> pruned;
  pruned.reserve(k);
  double largest = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    largest = std::max(largest, kept[i].first);
    const auto [slot, elem] = mask.locate(kept[i].second);
    detail::prune_element(params, opt, mask, slot, elem);
    pruned.push_back(kept[i].second);
  }
  mask.explicit_pruned += k;
  mask.threshold = std::max(mask.threshold, largest);
  std::sort(pruned.begin(), pruned.end());
  params.touch();
  return pruned;
}

/// Same count contract as gmp_topup but the victims are drawn uniformly
/// without replacement from the kept set; the threshold is not updated.
inline std::vector<std::size_t> random_topup(ParamStore& params, MaskState& mask, double r_target,
                                             Rng& rng, OptimizerState* opt = nullptr) {
  const std::size_t k = detail::topup_count(mask, r_target);
  if (k == 0) return {};

  std::vector<std::size_t> kept;
  kept.reserve(mask.kept_count);
  for (const auto& tm : mask.tensors)
    for (std::size_t e = 0; e < tm.kept.size(); ++e)
      if (tm.kept[e]) kept.push_back(tm.global_offset + e);

  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(kept.size() - i));
    std::swap(kept[i], kept[j]);
  }
  kept.resize(k);
  for (std::size_t g : kept) {
    const auto [slot, elem] = mask.locate(g);
    detail::prune_element(params, opt, mask, slot, elem);
  }
  mask.explicit_pruned += k;
  std::sort(kept.begin(), kept.end());
  params.touch();
  return kept;
}

}  // namespace shedlab
