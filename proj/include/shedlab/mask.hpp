#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/params.hpp"

namespace shedlab {

/// Bit-mask over the prunable parameters of a ParamStore, in registration
/// order, with the global magnitude threshold and keep accounting. Masks
/// only ever flip kept -> pruned and the threshold only ever grows.
struct MaskState {
  struct TensorMask {
    std::string name;
    std::size_t param_index = 0;   // index into ParamStore::tensors
    std::size_t global_offset = 0; // first global prunable index of this tensor
    std::vector<std::uint8_t> kept; // 1 = kept
  };

  std::vector<TensorMask> tensors;
  double threshold = 1e-4;
  std::size_t total = 0;
  std::size_t kept_count = 0;
  std::uint64_t explicit_pruned = 0;
  std::uint64_t shed = 0;

  static MaskState for_params(const ParamStore& params, double initial_threshold = 1e-4) {
    if (initial_threshold < 0.0) throw ValidationError("initial threshold must be >= 0");
    MaskState mask;
    mask.threshold = initial_threshold;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.count(); ++i) {
      const ParamTensor& t = params.at(i);
      if (!t.prunable) continue;
      TensorMask tm;
      tm.name = t.name;
      tm.param_index = i;
      tm.global_offset = offset;
      tm.kept.assign(t.value.size(), 1);
      offset += t.value.size();
      mask.tensors.push_back(std::move(tm));
    }
    mask.total = offset;
    mask.kept_count = offset;
    return mask;
  }

  /// (tensor slot, element offset) for a global prunable index.
  std::pair<std::size_t, std::size_t> locate(std::size_t global_index) const {
    for (std::size_t s = tensors.size(); s-- > 0;)
      if (global_index >= tensors[s].global_offset)
        return {s, global_index - tensors[s].global_offset};
    throw RangeError("global prunable index out of range");
  }

  bool is_kept(std::size_t global_index) const {
    const auto [slot, elem] = locate(global_index);
    return tensors[slot].kept[elem] != 0;
  }
};

/// Actual keep-ratio rho = kept / total.
inline double keep_ratio(const MaskState& mask) {
  if (mask.total == 0) return 1.0;
  return static_cast<double>(mask.kept_count) / static_cast<double>(mask.total);
}

}  // namespace shedlab
