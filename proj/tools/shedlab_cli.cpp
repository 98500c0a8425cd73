// Command-line front end: runs pruning experiments, momentum sweeps and the
// post-hoc analyses, and generates synthetic datasets.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "shedlab/analysis.hpp"
#include "shedlab/config.hpp"
#include "shedlab/dataset.hpp"
#include "shedlab/harness.hpp"
#include "shedlab/snapshot.hpp"
#include "shedlab/trace.hpp"

namespace fs = std::filesystem;
using namespace shedlab;

namespace {

std::string real_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string short_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void write_run_outputs(const fs::path& dir, const std::string& stem, const RunResult& result) {
  write_trace((dir / (stem + "trace.csv")).string(), result.trace);
  write_mask_snapshot((dir / (stem + "mask.bin")).string(), result.mask, result.granularity);
  write_weights((dir / (stem + "weights.bin")).string(), result.params);
}

void print_run_summary(const std::string& label, const RunResult& result) {
  const TraceRow& last = result.trace.rows.back();
  const ShedAttribution attr = shed_attribution(result.trace);
  std::cout << label << ": steps=" << last.step << " keep=" << short_real(last.actual_keep)
            << " explicit=" << last.explicit_cum << " shed=" << last.shed_cum
            << " cascade_ratio=" << short_real(attr.cascade_ratio)
            << " loss=" << short_real(last.loss);
  if (last.has_eval) std::cout << " eval_acc=" << short_real(last.eval_acc);
  std::cout << "\n";
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config(config_path);
  fs::create_directories(out_dir);
  const RunResult result = run_experiment(cfg);
  write_run_outputs(out_dir, "", result);
  std::ifstream src(config_path, std::ios::binary);
  std::ofstream dst(fs::path(out_dir) / "config.cfg", std::ios::binary);
  dst << src.rdbuf();
  print_run_summary("run", result);
  if (result.aborted) {
    std::cerr << "error: " << result.abort_reason << "\n";
    return 1;
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& momenta_arg,
              const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config(config_path);
  std::vector<double> momenta;
  std::stringstream ss(momenta_arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double mu = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size())
      throw ValidationError("bad momentum value '" + item + "'");
    momenta.push_back(mu);
  }
  fs::create_directories(out_dir);
  const auto results = momentum_sweep(cfg, momenta);

  std::string summary = "mu,final_keep,explicit_cum,shed_cum,cascade_ratio,eval_acc\n";
  bool any_aborted = false;
  for (const auto& [mu, result] : results) {
    const std::string stem = "mu_" + short_real(mu) + "_";
    write_run_outputs(out_dir, stem, result);
    print_run_summary("mu=" + short_real(mu), result);
    any_aborted = any_aborted || result.aborted;
    const TraceRow& last = result.trace.rows.back();
    const ShedAttribution attr = shed_attribution(result.trace);
    summary += short_real(mu);
    summary += ',' + real_str(last.actual_keep);
    summary += ',' + std::to_string(last.explicit_cum);
    summary += ',' + std::to_string(last.shed_cum);
    summary += ',' + real_str(attr.cascade_ratio);
    summary += ',' + (last.has_eval ? real_str(last.eval_acc) : std::string());
    summary += '\n';
  }
  std::ofstream out(fs::path(out_dir) / "sweep_summary.csv", std::ios::binary);
  out << summary;
  if (any_aborted) {
    std::cerr << "error: at least one sweep run aborted\n";
    return 1;
  }
  return 0;
}

int cmd_iou(const std::string& a_path, const std::string& b_path) {
  const MaskSnapshot a = read_mask_snapshot(a_path);
  const MaskSnapshot b = read_mask_snapshot(b_path);
  if (a.granularity != b.granularity)
    throw StructuralError("snapshots have different granularities");
  std::cout << "iou = " << real_str(iou(a.mask, b.mask)) << "\n";
  return 0;
}

int cmd_trace(const std::string& in_path, bool fit_exp) {
  const RunTrace trace = read_trace(in_path);
  if (trace.rows.empty()) throw EmptyInputError("trace has no rows");
  const TraceRow& last = trace.rows.back();
  const ShedAttribution attr = shed_attribution(trace);
  std::cout << "rows = " << trace.rows.size() << "\n"
            << "final_step = " << last.step << "\n"
            << "final_keep = " << real_str(last.actual_keep) << "\n"
            << "explicit_cum = " << last.explicit_cum << "\n"
            << "shed_cum = " << last.shed_cum << "\n"
            << "cascade_ratio = " << real_str(attr.cascade_ratio) << "\n";
  if (fit_exp) {
    const FitResult fit = fit_exponential(trace);
    std::cout << "fit_tau = " << real_str(fit.time_constant) << "\n"
              << "fit_asymptote = " << real_str(fit.asymptote) << "\n"
              << "fit_initial = " << real_str(fit.initial_value) << "\n"
              << "fit_residual = " << real_str(fit.residual_norm) << "\n"
              << "fit_r_squared = " << real_str(fit.r_squared) << "\n";
  }
  return 0;
}

int cmd_blockpmf(const std::string& weights_path, const std::string& snapshot_path, double cutoff) {
  ParamStore params = read_weights(weights_path);
  const MaskSnapshot snap = read_mask_snapshot(snapshot_path);
  if (snap.granularity != MaskGranularity::block)
    throw StructuralError(snapshot_path + ": snapshot is not block-granularity");
  for (const auto& tm : snap.mask.tensors) {
    bool found = false;
    for (auto& t : params.tensors)
      if (t.name == tm.name) {
        t.prunable = true;
        found = true;
        break;
      }
    if (!found)
      throw StructuralError("snapshot tensor '" + tm.name + "' not present in weight file");
  }
  const BlockPartition part = build_partition(params);
  MaskState bmask = block_mask_for(part);
  if (bmask.tensors.size() != snap.mask.tensors.size())
    throw StructuralError("snapshot does not match the weight file's prunable tensors");
  for (std::size_t s = 0; s < bmask.tensors.size(); ++s) {
    if (bmask.tensors[s].name != snap.mask.tensors[s].name ||
        bmask.tensors[s].kept.size() != snap.mask.tensors[s].kept.size())
      throw StructuralError("block count mismatch for tensor '" + bmask.tensors[s].name + "'");
    bmask.tensors[s].kept = snap.mask.tensors[s].kept;
  }
  bmask.kept_count = snap.mask.kept_count;

  const std::vector<double> pmf = kept_block_l0_pmf(params, part, bmask, cutoff);
  std::cout << "l0,probability\n";
  for (std::size_t l0 = 0; l0 < pmf.size(); ++l0)
    std::cout << l0 << "," << real_str(pmf[l0]) << "\n";
  return 0;
}

int cmd_dataset_synth(std::uint64_t seed, const std::string& out_dir, std::size_t classes,
                      std::size_t dim, std::size_t samples, std::size_t eval_samples,
                      double noise) {
  const Dataset all = synthetic_blobs(classes, dim, samples + eval_samples, noise, seed);
  double lo = all.features[0], hi = all.features[0];
  for (double v : all.features) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;

  const auto quantize = [&](std::size_t from, std::size_t count) {
    std::vector<unsigned char> bytes(count * dim);
    for (std::size_t i = 0; i < count * dim; ++i) {
      const double v = (all.features[from * dim + i] - lo) / (hi - lo);
      bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    return bytes;
  };
  const auto labels_of = [&](std::size_t from, std::size_t count) {
    std::vector<unsigned char> bytes(count);
    for (std::size_t i = 0; i < count; ++i)
      bytes[i] = static_cast<unsigned char>(all.labels[from + i]);
    return bytes;
  };

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_idx_images((dir / "train-images.idx").string(), static_cast<std::uint32_t>(samples), 1,
                   static_cast<std::uint32_t>(dim), quantize(0, samples));
  write_idx_labels((dir / "train-labels.idx").string(), labels_of(0, samples));
  write_idx_images((dir / "eval-images.idx").string(), static_cast<std::uint32_t>(eval_samples), 1,
                   static_cast<std::uint32_t>(dim), quantize(samples, eval_samples));
  write_idx_labels((dir / "eval-labels.idx").string(), labels_of(samples, eval_samples));

  // Config constants that map bytes back onto the original value range:
  // value = (byte/255 - mean) / std.
  const double mean = -lo / (hi - lo);
  const double stddev = 1.0 / (hi - lo);
  std::ofstream meta(dir / "meta.txt", std::ios::binary);
  meta << "classes = " << classes << "\n"
       << "dim = " << dim << "\n"
       << "train_samples = " << samples << "\n"
       << "eval_samples = " << eval_samples << "\n"
       << "noise = " << real_str(noise) << "\n"
       << "seed = " << seed << "\n"
       << "dataset.mean = " << real_str(mean) << "\n"
       << "dataset.std = " << real_str(stddev) << "\n";
  std::cout << "wrote " << samples << " train and " << eval_samples << " eval samples to "
            << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shedlab: iterative magnitude/random/4x1-block pruning experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, momenta_arg;
  std::string snap_a, snap_b, trace_in, weights_path, snapshot_path;
  bool fit_exp = false;
  double cutoff = 6e-3;
  std::uint64_t synth_seed = 0;
  std::size_t synth_classes = 10, synth_dim = 64, synth_samples = 5120, synth_eval = 1280;
  double synth_noise = 0.35;

  CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "run the same config across momentum values");
  sweep->add_option("--config", config_path, "experiment config file")->required();
  sweep->add_option("--momenta", momenta_arg, "comma-separated momentum values")->required();
  sweep->add_option("--out", out_dir, "output directory")->required();

  CLI::App* analyze = app.add_subcommand("analyze", "post-hoc analyses");
  analyze->require_subcommand(1);
  CLI::App* iou_cmd = analyze->add_subcommand("iou", "IoU of two mask snapshots");
  iou_cmd->add_option("--a", snap_a, "first snapshot")->required();
  iou_cmd->add_option("--b", snap_b, "second snapshot")->required();
  CLI::App* trace_cmd = analyze->add_subcommand("trace", "summarize a trace CSV");
  trace_cmd->add_option("--in", trace_in, "trace CSV file")->required();
  trace_cmd->add_flag("--fit-exp", fit_exp, "fit an exponential to the actual keep-ratio");
  CLI::App* pmf_cmd = analyze->add_subcommand("blockpmf", "L0 PMF of kept blocks");
  pmf_cmd->add_option("--weights", weights_path, "weight file")->required();
  pmf_cmd->add_option("--snapshot", snapshot_path, "block mask snapshot")->required();
  pmf_cmd->add_option("--cutoff", cutoff, "degenerate magnitude cutoff");

  CLI::App* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  CLI::App* synth = dataset->add_subcommand("synth", "generate a synthetic blob dataset");
  synth->add_option("--seed", synth_seed, "generator seed")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--classes", synth_classes, "number of classes");
  synth->add_option("--dim", synth_dim, "feature dimension");
  synth->add_option("--samples", synth_samples, "training samples");
  synth->add_option("--eval-samples", synth_eval, "evaluation samples");
  synth->add_option("--noise", synth_noise, "noise scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*sweep) return cmd_sweep(config_path, momenta_arg, out_dir);
    if (*iou_cmd) return cmd_iou(snap_a, snap_b);
    if (*trace_cmd) return cmd_trace(trace_in, fit_exp);
    if (*pmf_cmd) return cmd_blockpmf(weights_path, snapshot_path, cutoff);
    if (*synth) return cmd_dataset_synth(synth_seed, out_dir, synth_classes, synth_dim,
                                         synth_samples, synth_eval, synth_noise);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
