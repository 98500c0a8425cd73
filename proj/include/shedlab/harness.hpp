#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "shedlab/blocks.hpp"
#include "shedlab/config.hpp"
#include "shedlab/dataset.hpp"
#include "shedlab/errors.hpp"
#include "shedlab/network.hpp"
#include "shedlab/optimizer.hpp"
#include "shedlab/pruning.hpp"
#include "shedlab/schedules.hpp"
#include "shedlab/snapshot.hpp"
#include "shedlab/trace.hpp"

namespace shedlab {

struct RunResult {
  RunTrace trace;
  ParamStore params;
  MaskState mask;  // weight units for gmp/random, block units for block_gmp
  MaskGranularity granularity = MaskGranularity::weight;
  std::vector<double> thresholds;  // threshold value at each trace row
  bool aborted = false;
  std::string abort_reason;
};

/// Top-1 accuracy of the masked network on an evaluation set. Pure; also
/// verifies that every masked weight actually sits at zero.
inline double evaluate(const NetworkSpec& net, const ParamStore& params, const MaskState& mask,
                       const Dataset& eval_set, std::size_t batch_size = 256) {
  for (const auto& tm : mask.tensors) {
    const Tensor& value = params.at(tm.param_index).value;
    if (tm.kept.size() != value.size()) continue;  // block-unit mask, geometry checked elsewhere
    for (std::size_t k = 0; k < tm.kept.size(); ++k)
      if (!tm.kept[k] && value.data[k] != 0.0)
        throw StructuralError("masked weight is non-zero in '" + tm.name + "'");
  }
  const std::size_t n = eval_set.count();
  if (n == 0) throw EmptyInputError("empty evaluation set");
  std::size_t hits_num = 0;
  ForwardCache cache;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor batch = eval_set.gather(idx);
    std::vector<std::size_t> shape = net.input_shape;
    shape.insert(shape.begin(), idx.size());
    batch.shape = shape;  // reshape; element counts already validated
    const Tensor logits = forward(net, params, batch, cache);
    const std::vector<int> labels = eval_set.gather_labels(idx);
    hits_num += static_cast<std::size_t>(
        std::llround(top1_accuracy(logits, labels) * static_cast<double>(idx.size())));
  }
  return static_cast<double>(hits_num) / static_cast<double>(n);
}

namespace detail {

struct EpochSampler {
  const Dataset* data = nullptr;
  std::uint64_t shuffle_seed = 0;
  std::size_t epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;

  /// Sample indices for batch `pos` of `epoch`; the permutation reshuffles
  /// once per epoch and wraps when the epoch needs more samples than exist.
  std::vector<std::size_t> batch_indices(std::size_t want_epoch, std::size_t pos,
                                         std::size_t batch_size) {
    if (want_epoch != epoch) {
      epoch = want_epoch;
      perm.resize(data->count());
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(Rng::derive(shuffle_seed, static_cast<std::uint64_t>(want_epoch)));
      rng.shuffle(perm);
    }
    std::vector<std::size_t> out(batch_size);
    for (std::size_t j = 0; j < batch_size; ++j)
      out[j] = perm[(pos * batch_size + j) % perm.size()];
    return out;
  }
};

inline void clear_weight_bits_for_blocks(const BlockPartition& part,
                                         const std::vector<std::size_t>& pruned_blocks,
                                         MaskState& weight_mask) {
  for (std::size_t g : pruned_blocks) {
    std::size_t slot = part.tensors.size();
    while (slot-- > 0)
      if (g >= part.tensors[slot].block_offset) break;
    const Block& b = part.tensors[slot].blocks[g - part.tensors[slot].block_offset];
    auto& kept = weight_mask.tensors[slot].kept;
    for (std::size_t j = 0; j < b.size; ++j) {
      if (kept[b.elem[j]]) {
        kept[b.elem[j]] = 0;
        --weight_mask.kept_count;
      }
    }
  }
}

inline void validate_experiment(const ExperimentConfig& cfg, const Dataset& train,
                                const Dataset& eval_set) {
  const auto shapes = shape_chain(cfg.network);
  if (train.sample_size() != Tensor::element_count(cfg.network.input_shape))
    throw ValidationError("dataset sample size " + std::to_string(train.sample_size()) +
                          " does not match network input " +
                          shape_string(cfg.network.input_shape));
  const auto& out_shape = shapes.back();
  if (out_shape.size() != 1)
    throw ValidationError("network must end in a rank-1 logit layer");
  if (out_shape[0] < train.num_classes)
    throw ValidationError("network emits " + std::to_string(out_shape[0]) +
                          " logits for " + std::to_string(train.num_classes) + " classes");
  if (eval_set.count() == 0 && cfg.eval_every_epochs > 0)
    throw ValidationError("evaluation enabled but the evaluation set is empty");
}

}  // namespace detail

/// Builds the train/eval datasets named by the config.
inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == DatasetConfig::Kind::synthetic_blobs) {
    const std::uint64_t seed = cfg.dataset.seed.value_or(cfg.seed);
    const std::size_t total = cfg.dataset.train_samples + cfg.dataset.eval_samples;
    Dataset all = synthetic_blobs(cfg.dataset.classes, cfg.dataset.dim, total, cfg.dataset.noise,
                                  seed);
    Dataset train, eval_set;
    train.sample_shape = eval_set.sample_shape = all.sample_shape;
    train.num_classes = eval_set.num_classes = all.num_classes;
    const std::size_t dim = all.sample_size();
    train.features.assign(all.features.begin(),
                          all.features.begin() + cfg.dataset.train_samples * dim);
    train.labels.assign(all.labels.begin(), all.labels.begin() + cfg.dataset.train_samples);
    eval_set.features.assign(all.features.begin() + cfg.dataset.train_samples * dim,
                             all.features.end());
    eval_set.labels.assign(all.labels.begin() + cfg.dataset.train_samples, all.labels.end());
    return {std::move(train), std::move(eval_set)};
  }
  Dataset train = load_idx(cfg.dataset.images, cfg.dataset.labels, cfg.dataset.mean,
                           cfg.dataset.stddev);
  Dataset eval_set = load_idx(cfg.dataset.eval_images, cfg.dataset.eval_labels, cfg.dataset.mean,
                              cfg.dataset.stddev);
  return {std::move(train), std::move(eval_set)};
}

/// Runs one experiment to completion: per batch forward / loss / backward /
/// SGD step / degenerate detection, and at every update-interval boundary a
/// schedule sample, the configured top-up and a trace row. Fully
/// deterministic for a fixed config and seed.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto [train, eval_set] = load_datasets(cfg);
  detail::validate_experiment(cfg, train, eval_set);

  RunResult result;
  result.params = init_params(cfg.network, cfg.seed);
  OptimizerState opt = OptimizerState::for_params(result.params, cfg.momentum, cfg.weight_decay);

  const bool block_run = cfg.method == PruneMethodKind::block_gmp;
  result.granularity = block_run ? MaskGranularity::block : MaskGranularity::weight;
  BlockPartition part;
  MaskState weight_mask = MaskState::for_params(result.params, cfg.initial_threshold);
  MaskState block_mask;
  if (block_run) {
    part = build_partition(result.params);
    block_mask = block_mask_for(part, cfg.initial_threshold);
  }
  MaskState& active = block_run ? block_mask : weight_mask;

  Rng prune_rng(Rng::derive(cfg.seed, 0x70726e67));
  detail::EpochSampler sampler;
  sampler.data = &train;
  sampler.shuffle_seed = Rng::derive(cfg.seed, 0x73687566);

  const std::size_t total_batches = cfg.epochs * cfg.batches_per_epoch;
  const double bpe = static_cast<double>(cfg.batches_per_epoch);
  const std::size_t eval_stride = cfg.eval_every_epochs * cfg.batches_per_epoch;

  RunClock clock;
  clock.batches_per_epoch = cfg.batches_per_epoch;
  clock.total_epochs = cfg.epochs;
  clock.cycle_epochs = cfg.cycle_epochs;
  clock.num_cycles = cfg.num_cycles;

  const auto lr_at_batch = [&](std::size_t batch_index) {
    clock.batch_index = batch_index;
    return lr_value(cfg.lr, clock);
  };
  const auto run_detect = [&]() {
    if (block_run) {
      const auto shed_blocks = block_detect_degenerate(result.params, part, block_mask, &opt);
      detail::clear_weight_bits_for_blocks(part, shed_blocks, weight_mask);
    } else {
      detect_degenerate(result.params, weight_mask, &opt);
    }
  };

  // Pre-training snapshot row: loss and accuracy of the untouched network
  // on the first training batch.
  {
    const auto idx = sampler.batch_indices(0, 0, cfg.batch_size);
    Tensor batch = train.gather(idx);
    std::vector<std::size_t> shape = cfg.network.input_shape;
    shape.insert(shape.begin(), idx.size());
    batch.shape = shape;
    ForwardCache cache;
    const Tensor logits = forward(cfg.network, result.params, batch, cache);
    const std::vector<int> labels = train.gather_labels(idx);
    const auto [loss0, grad0] = softmax_cross_entropy(logits, labels);
    (void)grad0;

    TraceRow row;
    row.step = 0;
    row.t = 0.0;
    row.lr = total_batches > 0 ? lr_at_batch(0) : 0.0;
    row.target_keep = cfg.epochs > 0 ? keep_ratio_value(cfg.keep, 0.0) : 1.0;
    row.actual_keep = keep_ratio(active);
    row.explicit_cum = active.explicit_pruned;
    row.shed_cum = active.shed;
    row.loss = loss0;
    row.train_acc = top1_accuracy(logits, labels);
    if (cfg.eval_every_epochs > 0) {
      row.has_eval = true;
      row.eval_acc = evaluate(cfg.network, result.params, weight_mask, eval_set, cfg.batch_size);
    }
    result.trace.rows.push_back(row);
    result.thresholds.push_back(active.threshold);
  }

  double loss_sum = 0.0, acc_sum = 0.0;
  std::size_t since_row = 0;

  for (std::size_t s = 0; s < total_batches; ++s) {
    const std::size_t epoch = s / cfg.batches_per_epoch;
    const std::size_t pos = s % cfg.batches_per_epoch;
    const auto idx = sampler.batch_indices(epoch, pos, cfg.batch_size);
    Tensor batch = train.gather(idx);
    std::vector<std::size_t> shape = cfg.network.input_shape;
    shape.insert(shape.begin(), idx.size());
    batch.shape = shape;
    const std::vector<int> labels = train.gather_labels(idx);

    ForwardCache cache;
    const Tensor logits = forward(cfg.network, result.params, batch, cache);
    const auto [loss, loss_grad] = softmax_cross_entropy(logits, labels);
    const double lr = lr_at_batch(s);

    if (!std::isfinite(loss)) {
      TraceRow row;
      row.step = s + 1;
      row.t = static_cast<double>(s + 1) / bpe;
      row.lr = lr;
      row.target_keep = keep_ratio_value(cfg.keep, row.t);
      row.actual_keep = keep_ratio(active);
      row.explicit_cum = active.explicit_pruned;
      row.shed_cum = active.shed;
      row.loss = loss;
      row.train_acc = 0.0;
      result.trace.rows.push_back(row);
      result.thresholds.push_back(active.threshold);
      result.aborted = true;
      result.abort_reason = "non-finite loss at step " + std::to_string(s + 1);
      break;
    }
    loss_sum += loss;
    acc_sum += top1_accuracy(logits, labels);
    ++since_row;

    const auto grads = backward(cfg.network, result.params, cache, loss_grad);
    if (block_run && cfg.selective_decay) {
      const DecayOverride decay =
          selective_decay(result.params, part, block_mask, cfg.decay_base,
                          cfg.decay_cutoff.value_or(cfg.initial_threshold));
      sgd_step(result.params, grads, opt, weight_mask, lr, &decay);
    } else {
      sgd_step(result.params, grads, opt, weight_mask, lr);
    }
    if (cfg.detect == DetectCadence::per_batch) run_detect();

    if ((s + 1) % cfg.update_interval == 0) {
      if (cfg.detect == DetectCadence::per_interval) run_detect();
      const double t_boundary = static_cast<double>(s + 1) / bpe;
      const double target = keep_ratio_value(cfg.keep, t_boundary);
      if (block_run) {
        const auto pruned = block_gmp_topup(result.params, part, block_mask, target, &opt);
        detail::clear_weight_bits_for_blocks(part, pruned, weight_mask);
      } else if (cfg.method == PruneMethodKind::gmp) {
        gmp_topup(result.params, weight_mask, target, &opt);
      } else {
        random_topup(result.params, weight_mask, target, prune_rng, &opt);
      }

      TraceRow row;
      row.step = s + 1;
      row.t = t_boundary;
      row.lr = lr;
      row.target_keep = target;
      row.actual_keep = keep_ratio(active);
      row.explicit_cum = active.explicit_pruned;
      row.shed_cum = active.shed;
      row.loss = loss_sum / static_cast<double>(since_row);
      row.train_acc = acc_sum / static_cast<double>(since_row);
      if (cfg.eval_every_epochs > 0 && eval_stride > 0 && (s + 1) % eval_stride == 0) {
        row.has_eval = true;
        row.eval_acc = evaluate(cfg.network, result.params, weight_mask, eval_set, cfg.batch_size);
      }
      result.trace.rows.push_back(row);
      result.thresholds.push_back(active.threshold);
      loss_sum = acc_sum = 0.0;
      since_row = 0;
    }
  }

  result.mask = block_run ? std::move(block_mask) : std::move(weight_mask);
  return result;
}

/// Runs the same config once per momentum value. Everything else, including
/// the seed and therefore the data order, stays identical.
inline std::vector<std::pair<double, RunResult>> momentum_sweep(const ExperimentConfig& cfg,
                                                                const std::vector<double>& momenta) {
  if (momenta.size() < 2)
    throw ValidationError("momentum sweep needs at least 2 momentum values");
  std::vector<std::pair<double, RunResult>> results;
  results.reserve(momenta.size());
  for (double mu : momenta) {
    if (!(mu >= 0.0 && mu < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    ExperimentConfig run_cfg = cfg;
    run_cfg.momentum = mu;
    results.emplace_back(mu, run_experiment(run_cfg));
  }
  return results;
}

}  // namespace shedlab
