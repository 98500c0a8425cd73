#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/mask.hpp"
#include "shedlab/optimizer.hpp"
#include "shedlab/params.hpp"
#include "shedlab/pruning.hpp"

namespace shedlab {

/// Up to four weight indices (flat, within one tensor) sharing the same
/// output channel and spatial position, spanning adjacent input channels.
struct Block {
  std::array<std::size_t, 4> elem{};
  std::uint8_t size = 0;
};

/// Deterministic 4x1 grouping of every prunable tensor. Dense (out, in)
/// weights group along the input axis; conv (out, in, kh, kw) weights group
/// along the input-channel axis per (out, ky, kx). Only the last block of a
/// run may hold fewer than four elements. Blocks are ordered by their first
/// flat index.
struct BlockPartition {
  struct TensorBlocks {
    std::string name;
    std::size_t param_index = 0;
    std::size_t block_offset = 0;  // first global block index of this tensor
    std::vector<Block> blocks;
  };
  std::vector<TensorBlocks> tensors;
  std::size_t total_blocks = 0;
};

inline BlockPartition build_partition(const ParamStore& params) {
  BlockPartition part;
  std::size_t offset = 0;
  bool any = false;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const ParamTensor& t = params.at(i);
    if (!t.prunable) continue;
    any = true;
    BlockPartition::TensorBlocks tb;
    tb.name = t.name;
    tb.param_index = i;
    tb.block_offset = offset;
    const auto& shape = t.value.shape;
    if (shape.size() == 2) {
      const std::size_t out = shape[0], in = shape[1];
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i0 = 0; i0 < in; i0 += 4) {
          Block b;
          b.size = static_cast<std::uint8_t>(std::min<std::size_t>(4, in - i0));
          for (std::size_t j = 0; j < b.size; ++j) b.elem[j] = o * in + i0 + j;
          tb.blocks.push_back(b);
        }
    } else if (shape.size() == 4) {
      const std::size_t out = shape[0], in = shape[1], kh = shape[2], kw = shape[3];
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i0 = 0; i0 < in; i0 += 4) {
          const std::size_t run = std::min<std::size_t>(4, in - i0);
          for (std::size_t y = 0; y < kh; ++y)
            for (std::size_t x = 0; x < kw; ++x) {
              Block b;
              b.size = static_cast<std::uint8_t>(run);
              for (std::size_t j = 0; j < run; ++j)
                b.elem[j] = ((o * in + i0 + j) * kh + y) * kw + x;
              tb.blocks.push_back(b);
            }
        }
    } else {
      throw StructuralError("no 4x1 block rule for prunable tensor of rank " +
                            std::to_string(shape.size()));
    }
    offset += tb.blocks.size();
    part.tensors.push_back(std::move(tb));
  }
  if (!any) throw StructuralError("network has no prunable tensors to partition");
  part.total_blocks = offset;
  return part;
}

/// Mask over blocks (one bit per block) reusing the weight-mask container,
/// so snapshots and IoU treat both granularities uniformly.
inline MaskState block_mask_for(const BlockPartition& part, double initial_threshold = 1e-4) {
  if (initial_threshold < 0.0) throw ValidationError("initial threshold must be >= 0");
  MaskState mask;
  mask.threshold = initial_threshold;
  for (const auto& tb : part.tensors) {
    MaskState::TensorMask tm;
    tm.name = tb.name;
    tm.param_index = tb.param_index;
    tm.global_offset = tb.block_offset;
    tm.kept.assign(tb.blocks.size(), 1);
    mask.tensors.push_back(std::move(tm));
  }
  mask.total = part.total_blocks;
  mask.kept_count = part.total_blocks;
  return mask;
}

/// Euclidean norm of the block's current weights.
inline double block_l2(const Tensor& value, const Block& block) {
  double sq = 0.0;
  for (std::size_t j = 0; j < block.size; ++j) {
    const double w = value.data[block.elem[j]];
    sq += w * w;
  }
  return std::sqrt(sq);
}

/// Count of block elements at or above the cutoff magnitude.
inline std::size_t block_l0(const Tensor& value, const Block& block, double cutoff) {
  if (cutoff < 0.0) throw RangeError("cutoff must be >= 0");
  std::size_t n = 0;
  for (std::size_t j = 0; j < block.size; ++j)
    if (std::fabs(value.data[block.elem[j]]) >= cutoff) ++n;
  return n;
}

namespace detail {

inline void prune_block(ParamStore& params, OptimizerState* opt, const BlockPartition& part,
                        MaskState& bmask, std::size_t slot, std::size_t block_index) {
  const BlockPartition::TensorBlocks& tb = part.tensors[slot];
  const Block& b = tb.blocks[block_index];
  bmask.tensors[slot].kept[block_index] = 0;
  for (std::size_t j = 0; j < b.size; ++j) {
    params.at(tb.param_index).value.data[b.elem[j]] = 0.0;
    if (opt) opt->velocity[tb.param_index].data[b.elem[j]] = 0.0;
  }
  --bmask.kept_count;
}

}  // namespace detail

/// Kept blocks whose L2 norm fell strictly below the block threshold are
/// pruned whole and counted as shed. Returns the global block indices.
inline std::vector<std::size_t> block_detect_degenerate(ParamStore& params,
                                                        const BlockPartition& part,
                                                        MaskState& bmask,
                                                        OptimizerState* opt = nullptr) {
  std::vector<std::size_t> shed_now;
  for (std::size_t slot = 0; slot < part.tensors.size(); ++slot) {
    const auto& tb = part.tensors[slot];
    const Tensor& value = params.at(tb.param_index).value;
    for (std::size_t k = 0; k < tb.blocks.size(); ++k) {
      if (!bmask.tensors[slot].kept[k]) continue;
      if (block_l2(value, tb.blocks[k]) < bmask.threshold) {
        detail::prune_block(params, opt, part, bmask, slot, k);
        shed_now.push_back(tb.block_offset + k);
      }
    }
  }
  bmask.shed += shed_now.size();
  if (!shed_now.empty()) params.touch();
  return shed_now;
}

/// Block analogue of gmp_topup: prunes the smallest-L2 kept blocks (ties to
/// the lower block index) down to the target block keep-ratio, then raises
/// the block threshold to the largest L2 pruned so far.
inline std::vector<std::size_t> block_gmp_topup(ParamStore& params, const BlockPartition& part,
                                                MaskState& bmask, double r_target,
                                                OptimizerState* opt = nullptr) {
  const std::size_t k = detail::topup_count(bmask, r_target);
  if (k == 0) return {};

  std::vector<std::pair<double, std::size_t>> kept;  // (L2, global block index)
  kept.reserve(bmask.kept_count);
  for (std::size_t slot = 0; slot < part.tensors.size(); ++slot) {
    const auto& tb = part.tensors[slot];
    const Tensor& value = params.at(tb.param_index).value;
    for (std::size_t e = 0; e < tb.blocks.size(); ++e)
      if (bmask.tensors[slot].kept[e])
        kept.emplace_back(block_l2(value, tb.blocks[e]), tb.block_offset + e);
  }
  std::nth_element(kept.begin(), kept.begin() + (k - 1), kept.end());
  std::sort(kept.begin(), kept.begin() + k);

  std::vector<std::size_t> pruned;
  pruned.reserve(k);
  double largest = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    largest = std::max(largest, kept[i].first);
    const auto [slot, elem] = bmask.locate(kept[i].second);
    detail::prune_block(params, opt, part, bmask, slot, elem);
    pruned.push_back(kept[i].second);
  }
  bmask.explicit_pruned += k;
  bmask.threshold = std::max(bmask.threshold, largest);
  std::sort(pruned.begin(), pruned.end());
  params.touch();
  return pruned;
}

/// Multiplier applied to the base decay for a kept block with n elements
/// above the cutoff. Size-4 blocks follow the map {0,4,2,1,0}; ragged tail
/// blocks interpolate that map at 4n/size, which keeps both endpoints at 0.
inline double selective_decay_multiplier(std::size_t l0, std::size_t block_size) {
  static constexpr double kMap[5] = {0.0, 4.0, 2.0, 1.0, 0.0};
  if (block_size == 0 || l0 > block_size) throw RangeError("L0 exceeds block size");
  const double pos = 4.0 * static_cast<double>(l0) / static_cast<double>(block_size);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo >= 4) return kMap[4];
  const double frac = pos - static_cast<double>(lo);
  return kMap[lo] + frac * (kMap[lo + 1] - kMap[lo]);
}

/// Per-weight decay coefficients keyed to each kept block's L0 norm:
/// multiplier(L0) * base for every element of the block, zero for pruned
/// blocks. Output rows align with the block mask's tensor slots.
inline DecayOverride selective_decay(const ParamStore& params, const BlockPartition& part,
                                     const MaskState& bmask, double base = 1e-4,
                                     double cutoff = 1e-4) {
  DecayOverride decay(part.tensors.size());
  for (std::size_t slot = 0; slot < part.tensors.size(); ++slot) {
    const auto& tb = part.tensors[slot];
    const Tensor& value = params.at(tb.param_index).value;
    decay[slot].assign(value.size(), 0.0);
    for (std::size_t e = 0; e < tb.blocks.size(); ++e) {
      if (!bmask.tensors[slot].kept[e]) continue;
      const Block& b = tb.blocks[e];
      const double d = selective_decay_multiplier(block_l0(value, b, cutoff), b.size) * base;
      for (std::size_t j = 0; j < b.size; ++j) decay[slot][b.elem[j]] = d;
    }
  }
  return decay;
}

}  // namespace shedlab
