#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/tensor.hpp"

namespace shedlab {

/// One named parameter tensor. Only prunable tensors take part in masking
/// and keep-ratio accounting; biases and normalization parameters never do.
struct ParamTensor {
  std::string name;
  Tensor value;
  bool prunable = false;
};

/// Named dense parameters of a network, in registration order. The revision
/// counter advances on every mutation so stale forward caches are caught.
struct ParamStore {
  std::vector<ParamTensor> tensors;
  std::uint64_t revision = 0;

  std::size_t count() const { return tensors.size(); }

  ParamTensor& at(std::size_t i) { return tensors[i]; }
  const ParamTensor& at(std::size_t i) const { return tensors[i]; }

  const ParamTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  std::size_t prunable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors)
      if (t.prunable) n += t.value.size();
    return n;
  }

  void touch() { ++revision; }
};

/// Gradient (or velocity) buffers aligned one-to-one with a ParamStore.
inline std::vector<Tensor> zeros_like(const ParamStore& params) {
  std::vector<Tensor> out;
  out.reserve(params.count());
  for (const auto& t : params.tensors) out.push_back(Tensor::zeros(t.value.shape));
  return out;
}

}  // namespace shedlab
