#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/mask.hpp"
#include "shedlab/params.hpp"
#include "shedlab/tensor.hpp"

namespace shedlab {

/// Heavy-ball SGD state with decay folded into the gradient:
///   v <- mu * v + g + d * w,   w <- w - lr * v.
/// Velocities of masked weights are pinned to exactly zero.
struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Tensor> velocity;

  static OptimizerState for_params(const ParamStore& params, double momentum,
                                   double weight_decay) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ValidationError("weight decay must be >= 0");
    return OptimizerState{momentum, weight_decay, zeros_like(params)};
  }
};

/// Per-element decay coefficients for prunable tensors, aligned with
/// MaskState::tensors. Empty = use the optimizer's base weight decay.
using DecayOverride = std::vector<std::vector<double>>;

/// One SGD step. Masked weights and their velocities are hard-zeroed;
/// everything else follows the momentum update above.
inline void sgd_step(ParamStore& params, const std::vector<Tensor>& grads, OptimizerState& opt,
                     const MaskState& mask, double lr, const DecayOverride* decay = nullptr) {
  if (grads.size() != params.count()) throw StructuralError("gradient count does not match parameters");
  if (decay && decay->size() != mask.tensors.size())
    throw StructuralError("decay override does not match prunable tensor count");

  for (std::size_t i = 0; i < params.count(); ++i) {
    if (!params.at(i).value.same_shape(grads[i]) || !params.at(i).value.same_shape(opt.velocity[i]))
      throw StructuralError("misaligned shapes for parameter " + params.at(i).name);
    if (!grads[i].all_finite())
      throw NumericError("non-finite gradient for parameter " + params.at(i).name);
  }

  const double mu = opt.momentum;
  std::size_t slot = 0;
  for (std::size_t i = 0; i < params.count(); ++i) {
    ParamTensor& p = params.at(i);
    Tensor& v = opt.velocity[i];
    const Tensor& g = grads[i];
    const bool masked_tensor = p.prunable && slot < mask.tensors.size() &&
                               mask.tensors[slot].param_index == i;
    const std::vector<std::uint8_t>* kept = masked_tensor ? &mask.tensors[slot].kept : nullptr;
    const std::vector<double>* d_row = (masked_tensor && decay) ? &(*decay)[slot] : nullptr;
    if (d_row && d_row->size() != p.value.size())
      throw StructuralError("decay override misaligned for " + p.name);

    for (std::size_t k = 0; k < p.value.size(); ++k) {
      if (kept && !(*kept)[k]) {
        p.value.data[k] = 0.0;
        v.data[k] = 0.0;
        continue;
      }
      const double d = d_row ? (*d_row)[k] : opt.weight_decay;
      v.data[k] = mu * v.data[k] + g.data[k] + d * p.value.data[k];
      p.value.data[k] -= lr * v.data[k];
    }
    if (masked_tensor) ++slot;
  }
  params.touch();
}

}  // namespace shedlab
