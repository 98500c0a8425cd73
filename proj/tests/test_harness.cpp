#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "shedlab/analysis.hpp"
#include "shedlab/harness.hpp"
#include "shedlab/snapshot.hpp"
#include "shedlab/trace.hpp"

using namespace shedlab;
namespace fs = std::filesystem;

namespace {

const char* kSmallRun =
    "input = 16\n"
    "network = dense(16,24) relu dense(24,4)\n"
    "dataset.kind = synthetic_blobs\n"
    "dataset.classes = 4\n"
    "dataset.dim = 16\n"
    "dataset.train_samples = 256\n"
    "dataset.eval_samples = 64\n"
    "dataset.noise = 0.4\n"
    "run.epochs = 5\n"
    "run.batches_per_epoch = 8\n"
    "run.batch_size = 32\n"
    "run.seed = 3\n"
    "lr.boundaries = 2,4,5\n"
    "prune.final_keep = 0.3\n"
    "prune.interval = 8\n";

// Applies override lines onto the base config, replacing same-key lines.
ExperimentConfig small_config(const std::string& extra = "") {
  std::vector<std::pair<std::string, std::string>> kv;
  const auto absorb = [&kv](const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      bool replaced = false;
      for (auto& [k, v] : kv)
        if (k == key) {
          v = line;
          replaced = true;
        }
      if (!replaced) kv.emplace_back(key, line);
    }
  };
  absorb(kSmallRun);
  absorb(extra);
  std::string merged;
  for (const auto& [k, line] : kv) merged += line + "\n";
  return parse_config_text(merged, "small");
}

fs::path tmp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "shedlab_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  REQUIRE(in);
  std::vector<char> buf(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  return buf;
}

}  // namespace

TEST_CASE("empty run produces only the initial trace row") {
  const RunResult result = run_experiment(small_config("run.epochs = 0\n"));
  REQUIRE(result.trace.rows.size() == 1);
  CHECK(result.trace.rows[0].step == 0);
  CHECK(result.trace.rows[0].actual_keep == 1.0);
  CHECK(result.trace.rows[0].explicit_cum == 0);
  CHECK(result.trace.rows[0].shed_cum == 0);
  CHECK(result.mask.kept_count == result.mask.total);
  CHECK_FALSE(result.aborted);
}

TEST_CASE("final keep-ratio of one never prunes explicitly") {
  const RunResult result = run_experiment(small_config("prune.final_keep = 1.0\n"));
  for (const TraceRow& row : result.trace.rows) CHECK(row.explicit_cum == 0);
}

TEST_CASE("identical seeds give byte-identical trace and snapshot files") {
  const ExperimentConfig cfg = small_config();
  const RunResult a = run_experiment(cfg);
  const RunResult b = run_experiment(cfg);

  const fs::path ta = tmp_path("a.csv"), tb = tmp_path("b.csv");
  write_trace(ta.string(), a.trace);
  write_trace(tb.string(), b.trace);
  CHECK(slurp(ta) == slurp(tb));

  const fs::path ma = tmp_path("a_mask.bin"), mb = tmp_path("b_mask.bin");
  write_mask_snapshot(ma.string(), a.mask, a.granularity);
  write_mask_snapshot(mb.string(), b.mask, b.granularity);
  CHECK(slurp(ma) == slurp(mb));

  const fs::path wa = tmp_path("a_w.bin"), wb = tmp_path("b_w.bin");
  write_weights(wa.string(), a.params);
  write_weights(wb.string(), b.params);
  CHECK(slurp(wa) == slurp(wb));
}

TEST_CASE("gmp run trace satisfies the run invariants") {
  const ExperimentConfig cfg = small_config();
  const RunResult result = run_experiment(cfg);
  REQUIRE(result.trace.rows.size() == 1 + 5 * 8 / 8);
  CHECK_FALSE(result.aborted);

  const double n = static_cast<double>(result.mask.total);
  double prev_rho = 2.0;
  std::uint64_t prev_step = 0;
  for (std::size_t i = 0; i < result.trace.rows.size(); ++i) {
    const TraceRow& row = result.trace.rows[i];
    if (i > 0) {
      CHECK(row.step > prev_step);
      // Target column equals the schedule sampled at the boundary.
      CHECK(row.target_keep == keep_ratio_value(cfg.keep, row.t));
      // One-weight granularity around the target after top-up.
      CHECK(row.actual_keep <= row.target_keep + 1.0 / n);
    }
    CHECK(row.actual_keep <= prev_rho);
    const std::uint64_t kept =
        static_cast<std::uint64_t>(std::llround(row.actual_keep * n));
    CHECK(kept + row.explicit_cum + row.shed_cum == result.mask.total);
    prev_rho = row.actual_keep;
    prev_step = row.step;
  }
  const TraceRow& last = result.trace.rows.back();
  CHECK(last.actual_keep <= 0.3 + 1.0 / n);
  CHECK(last.explicit_cum > 0);
}

TEST_CASE("trace r_t and lr columns are seed-independent for gmp") {
  const RunResult a = run_experiment(small_config("prune.method = gmp\n"));
  const RunResult b = run_experiment(small_config("prune.method = gmp\nrun.seed = 99\n"));
  REQUIRE(a.trace.rows.size() == b.trace.rows.size());
  bool masks_differ = false;
  for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
    CHECK(a.trace.rows[i].target_keep == b.trace.rows[i].target_keep);
    CHECK(a.trace.rows[i].lr == b.trace.rows[i].lr);
  }
  for (std::size_t s = 0; s < a.mask.tensors.size(); ++s)
    masks_differ = masks_differ || a.mask.tensors[s].kept != b.mask.tensors[s].kept;
  CHECK(masks_differ);  // different seed, different weights, different victims
}

TEST_CASE("random pruning is deterministic per seed and varies across seeds") {
  const RunResult a1 = run_experiment(small_config("prune.method = random\n"));
  const RunResult a2 = run_experiment(small_config("prune.method = random\n"));
  const RunResult b = run_experiment(small_config("prune.method = random\nrun.seed = 99\n"));

  CHECK(trace_to_csv(a1.trace) == trace_to_csv(a2.trace));
  bool differ = false;
  for (std::size_t s = 0; s < a1.mask.tensors.size(); ++s)
    differ = differ || a1.mask.tensors[s].kept != b.mask.tensors[s].kept;
  CHECK(differ);
  // Random pruning never raises the threshold.
  CHECK(a1.mask.threshold == 1e-4);
}

TEST_CASE("momentum sweep shares schedule columns across momenta") {
  const ExperimentConfig cfg = small_config();
  const auto results = momentum_sweep(cfg, {0.0, 0.9});
  REQUIRE(results.size() == 2);
  CHECK(results[0].first == 0.0);
  CHECK(results[1].first == 0.9);
  const RunTrace& t0 = results[0].second.trace;
  const RunTrace& t1 = results[1].second.trace;
  REQUIRE(t0.rows.size() == t1.rows.size());
  for (std::size_t i = 0; i < t0.rows.size(); ++i) {
    CHECK(t0.rows[i].target_keep == t1.rows[i].target_keep);
    CHECK(t0.rows[i].lr == t1.rows[i].lr);
    CHECK(t0.rows[i].step == t1.rows[i].step);
  }
  CHECK_THROWS_AS(momentum_sweep(cfg, {0.9}), ValidationError);
  CHECK_THROWS_AS(momentum_sweep(cfg, {0.5, 1.5}), ValidationError);
}

TEST_CASE("block run keeps block-level accounting") {
  const ExperimentConfig cfg = small_config(
      "prune.method = block_gmp\nprune.selective_decay = true\n");
  const RunResult result = run_experiment(cfg);
  CHECK(result.granularity == MaskGranularity::block);
  // 16x24 and 24x4 dense tensors: 4 blocks per row of 16, 6 per row of 24.
  const std::size_t expected_blocks = 24 * 4 + 4 * 6;
  CHECK(result.mask.total == expected_blocks);

  double prev = 2.0;
  for (const TraceRow& row : result.trace.rows) {
    const std::uint64_t kept =
        static_cast<std::uint64_t>(std::llround(row.actual_keep * double(expected_blocks)));
    CHECK(kept + row.explicit_cum + row.shed_cum == expected_blocks);
    CHECK(row.actual_keep <= prev);
    prev = row.actual_keep;
  }
  const TraceRow& last = result.trace.rows.back();
  CHECK(last.actual_keep <= 0.3 + 1.0 / double(expected_blocks));

  // Pruned blocks stay zero in the final weights.
  std::size_t zero_count = 0;
  for (const auto& t : result.params.tensors)
    if (t.prunable)
      for (double v : t.value.data) zero_count += v == 0.0;
  CHECK(zero_count >= (result.mask.total - result.mask.kept_count) * 4 - 8);
}

TEST_CASE("exploding learning rate aborts with a diagnostic row") {
  const RunResult result = run_experiment(small_config("lr.rates = 1e18,1e18,1e18\n"));
  CHECK(result.aborted);
  CHECK_FALSE(result.abort_reason.empty());
  REQUIRE(result.trace.rows.size() >= 2);
  CHECK_FALSE(std::isfinite(result.trace.rows.back().loss));
}

TEST_CASE("evaluate scores a perfect separator at 1.0") {
  NetworkSpec net{{2}, {LayerSpec::dense(2, 2)}};
  ParamStore params = init_params(net, 1);
  params.at(0).value.data = {1.0, 0.0, 0.0, 1.0};
  params.at(1).value.data = {0.0, 0.0};
  MaskState mask = MaskState::for_params(params);

  Dataset ds;
  ds.sample_shape = {2};
  ds.num_classes = 2;
  ds.features = {3.0, -3.0, -2.0, 2.0, 4.0, -1.0, -1.0, 4.0};
  ds.labels = {0, 1, 0, 1};
  CHECK(evaluate(net, params, mask, ds) == 1.0);
  CHECK(evaluate(net, params, mask, ds) == evaluate(net, params, mask, ds));
}

TEST_CASE("zero logits score the class-0 frequency under the first-max tie rule") {
  NetworkSpec net{{2}, {LayerSpec::dense(2, 2)}};
  ParamStore params = init_params(net, 1);
  params.at(0).value.data = {0, 0, 0, 0};
  params.at(1).value.data = {0, 0};
  MaskState mask = MaskState::for_params(params);

  Dataset ds;
  ds.sample_shape = {2};
  ds.num_classes = 2;
  ds.features = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  ds.labels = {0, 1, 0, 1, 1};
  CHECK(evaluate(net, params, mask, ds) == 0.4);
}

TEST_CASE("evaluate rejects masked weights that are not zero") {
  NetworkSpec net{{2}, {LayerSpec::dense(2, 2)}};
  ParamStore params = init_params(net, 1);
  params.at(0).value.data = {1.0, 0.5, 0.0, 1.0};
  MaskState mask = MaskState::for_params(params);
  mask.tensors[0].kept[1] = 0;
  --mask.kept_count;

  Dataset ds;
  ds.sample_shape = {2};
  ds.num_classes = 2;
  ds.features = {1, 2};
  ds.labels = {0};
  CHECK_THROWS_AS(evaluate(net, params, mask, ds), StructuralError);
}

TEST_CASE("config violations surface before any training step") {
  CHECK_THROWS_AS(run_experiment(small_config("dataset.dim = 12\n")), ValidationError);
  ExperimentConfig cfg = small_config();
  cfg.network.layers.back() = LayerSpec::dense(24, 2);  // fewer logits than classes
  CHECK_THROWS_AS(run_experiment(cfg), ValidationError);
}
