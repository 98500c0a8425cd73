// Minimal usage example: prune the same small network with two momentum
// values and print how much of the removal was explicit top-up versus
// threshold shedding.

#include <cstdio>

#include "shedlab/analysis.hpp"
#include "shedlab/config.hpp"
#include "shedlab/harness.hpp"

using namespace shedlab;

int main() {
  const char* cfg_text =
      "input = 64\n"
      "network = dense(64,200) relu dense(200,128) relu dense(128,10)\n"
      "dataset.kind = synthetic_blobs\n"
      "dataset.classes = 10\n"
      "dataset.dim = 64\n"
      "dataset.train_samples = 2048\n"
      "dataset.eval_samples = 512\n"
      "dataset.noise = 0.6\n"
      "run.epochs = 9\n"
      "run.batches_per_epoch = 16\n"
      "run.batch_size = 128\n"
      "run.seed = 7\n"
      "run.eval_every = 3\n"
      "lr.boundaries = 3,6,9\n"
      "prune.kind = linear\n"
      "prune.final_keep = 0.15\n"
      "prune.interval = 16\n";

  const ExperimentConfig cfg = parse_config_text(cfg_text, "demo");
  const auto results = momentum_sweep(cfg, {0.0, 0.5, 0.9});

  std::printf("%6s %10s %12s %10s %14s %10s\n", "mu", "keep", "explicit", "shed",
              "cascade_ratio", "eval_acc");
  for (const auto& [mu, result] : results) {
    const TraceRow& last = result.trace.rows.back();
    const ShedAttribution attr = shed_attribution(result.trace);
    std::printf("%6.2f %10.4f %12llu %10llu %14.4f %10.4f\n", mu, last.actual_keep,
                static_cast<unsigned long long>(last.explicit_cum),
                static_cast<unsigned long long>(last.shed_cum), attr.cascade_ratio,
                last.has_eval ? last.eval_acc : 0.0);
  }
  return 0;
}
