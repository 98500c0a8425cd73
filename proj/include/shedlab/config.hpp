#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/network.hpp"
#include "shedlab/schedules.hpp"

namespace shedlab {

enum class PruneMethodKind { gmp, random, block_gmp };
enum class DetectCadence { per_batch, per_interval };

struct DatasetConfig {
  enum class Kind { synthetic_blobs, idx } kind = Kind::synthetic_blobs;
  // synthetic blobs
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t train_samples = 6400;
  std::size_t eval_samples = 1280;
  double noise = 0.35;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  // idx files
  std::string images, labels, eval_images, eval_labels;
  double mean = 0.0;
  double stddev = 1.0;
};

/// Everything one experiment needs. Defaults follow the reference setup:
/// batch size 128, target updates every 100 batches, initial threshold
/// 1e-4, 5 cycles of 7 epochs.
struct ExperimentConfig {
  NetworkSpec network;
  DatasetConfig dataset;

  std::size_t epochs = 35;
  std::size_t cycle_epochs = 7;
  std::size_t num_cycles = 5;
  std::size_t batches_per_epoch = 0;  // required
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::size_t eval_every_epochs = 1;  // 0 disables evaluation

  LrSchedule lr;
  KeepRatioSchedule keep;
  PruneMethodKind method = PruneMethodKind::gmp;
  std::size_t update_interval = 100;
  double initial_threshold = 1e-4;
  DetectCadence detect = DetectCadence::per_batch;

  double momentum = 0.9;
  double weight_decay = 0.0;
  bool selective_decay = false;
  double decay_base = 1e-4;
  std::optional<double> decay_cutoff;  // defaults to initial_threshold
};

namespace detail {

struct ConfigEntry {
  std::string value;
  std::size_t line = 0;
  bool used = false;
};

using ConfigMap = std::map<std::string, ConfigEntry>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void key_error(const std::string& key, const ConfigEntry& e,
                                   const std::string& what) {
  throw ValidationError(key + ": " + what + " (line " + std::to_string(e.line) + ")");
}

struct ConfigReader {
  ConfigMap entries;
  std::string source;

  bool has(const std::string& key) {
    auto it = entries.find(key);
    if (it == entries.end()) return false;
    it->second.used = true;
    return true;
  }

  std::string raw(const std::string& key) { return entries.at(key).value; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    return has(key) ? raw(key) : fallback;
  }

  double get_real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const ConfigEntry& e = entries.at(key);
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (e.value.empty() || end != e.value.c_str() + e.value.size())
      key_error(key, e, "expected a real number, got '" + e.value + "'");
    return v;
  }

  std::uint64_t get_count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const ConfigEntry& e = entries.at(key);
    if (e.value.empty() || e.value.find_first_not_of("0123456789") != std::string::npos)
      key_error(key, e, "expected a non-negative integer, got '" + e.value + "'");
    return std::stoull(e.value);
  }

  bool get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const ConfigEntry& e = entries.at(key);
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    key_error(key, e, "expected true or false, got '" + e.value + "'");
  }

  std::vector<double> get_reals(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const ConfigEntry& e = entries.at(key);
    std::vector<double> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      char* end = nullptr;
      const double v = std::strtod(item.c_str(), &end);
      if (item.empty() || end != item.c_str() + item.size())
        key_error(key, e, "expected comma-separated reals, got '" + e.value + "'");
      out.push_back(v);
    }
    if (out.empty()) key_error(key, e, "expected at least one value");
    return out;
  }

  std::vector<std::size_t> get_counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const ConfigEntry& e = entries.at(key);
    std::vector<std::size_t> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
        key_error(key, e, "expected comma-separated integers, got '" + e.value + "'");
      out.push_back(std::stoull(item));
    }
    if (out.empty()) key_error(key, e, "expected at least one value");
    return out;
  }

  void require(const std::string& key) {
    if (entries.find(key) == entries.end())
      throw ValidationError(source + ": missing required key '" + key + "'");
    entries.at(key).used = true;
  }

  void finish() const {
    for (const auto& [key, e] : entries)
      if (!e.used)
        throw ValidationError("unknown key '" + key + "' (line " + std::to_string(e.line) + ")");
  }
};

inline ConfigReader tokenize_config(const std::string& text, const std::string& source) {
  ConfigReader reader;
  reader.source = source;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(source + ": line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError(source + ": line " + std::to_string(lineno) + ": empty key");
    if (reader.entries.count(key))
      throw ValidationError("duplicate key '" + key + "' (line " + std::to_string(lineno) + ")");
    reader.entries[key] = ConfigEntry{value, lineno, false};
  }
  return reader;
}

/// Layer list syntax: whitespace-separated tokens, e.g.
///   dense(64,256) relu dense(256,10)
///   conv2d(1,8,3,3,1,1) batchnorm(8) relu flatten dense(5408,10)
inline std::vector<LayerSpec> parse_layers(const std::string& text, const std::string& key,
                                           const ConfigEntry& entry) {
  std::vector<LayerSpec> layers;
  std::stringstream ss(text);
  std::string token;
  while (ss >> token) {
    const auto open = token.find('(');
    std::string name = token;
    std::vector<std::size_t> args;
    if (open != std::string::npos) {
      if (token.back() != ')') key_error(key, entry, "malformed layer token '" + token + "'");
      name = token.substr(0, open);
      std::stringstream as(token.substr(open + 1, token.size() - open - 2));
      std::string arg;
      while (std::getline(as, arg, ',')) {
        arg = trim(arg);
        if (arg.empty() || arg.find_first_not_of("0123456789") != std::string::npos)
          key_error(key, entry, "bad layer argument in '" + token + "'");
        args.push_back(std::stoull(arg));
      }
    }
    if (name == "relu" && args.empty()) {
      layers.push_back(LayerSpec::relu());
    } else if (name == "flatten" && args.empty()) {
      layers.push_back(LayerSpec::flatten());
    } else if (name == "dense" && args.size() == 2) {
      layers.push_back(LayerSpec::dense(args[0], args[1]));
    } else if (name == "batchnorm" && args.size() == 1) {
      layers.push_back(LayerSpec::batchnorm(args[0]));
    } else if (name == "conv2d" && (args.size() == 4 || args.size() == 5 || args.size() == 6)) {
      layers.push_back(LayerSpec::conv2d(args[0], args[1], args[2], args[3],
                                         args.size() > 4 ? args[4] : 1,
                                         args.size() > 5 ? args[5] : 0));
    } else {
      key_error(key, entry, "unknown layer '" + token + "'");
    }
  }
  if (layers.empty()) key_error(key, entry, "network needs at least one layer");
  return layers;
}

}  // namespace detail

/// Parses the flat key = value experiment config format. Unset keys take
/// the documented defaults; unknown keys, type mismatches and constraint
/// violations raise ValidationError naming the key and line.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  detail::ConfigReader reader = detail::tokenize_config(text, source);
  ExperimentConfig cfg;

  reader.require("input");
  reader.require("network");
  const auto& input_entry = reader.entries.at("input");
  {
    std::vector<std::size_t> dims;
    std::stringstream ss(input_entry.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
        detail::key_error("input", input_entry, "expected comma-separated dimensions");
      dims.push_back(std::stoull(item));
    }
    if (dims.empty() || std::find(dims.begin(), dims.end(), 0u) != dims.end())
      detail::key_error("input", input_entry, "dimensions must be positive");
    cfg.network.input_shape = dims;
  }
  cfg.network.layers =
      detail::parse_layers(reader.entries.at("network").value, "network", reader.entries.at("network"));

  // Dataset.
  const std::string ds_kind = reader.get_string("dataset.kind", "synthetic_blobs");
  if (ds_kind == "synthetic_blobs") {
    cfg.dataset.kind = DatasetConfig::Kind::synthetic_blobs;
  } else if (ds_kind == "idx") {
    cfg.dataset.kind = DatasetConfig::Kind::idx;
    reader.require("dataset.images");
    reader.require("dataset.labels");
    cfg.dataset.images = reader.raw("dataset.images");
    cfg.dataset.labels = reader.raw("dataset.labels");
    cfg.dataset.eval_images = reader.get_string("dataset.eval_images", cfg.dataset.images);
    cfg.dataset.eval_labels = reader.get_string("dataset.eval_labels", cfg.dataset.labels);
  } else {
    detail::key_error("dataset.kind", reader.entries.at("dataset.kind"),
                      "expected synthetic_blobs or idx");
  }
  cfg.dataset.classes = reader.get_count("dataset.classes", cfg.dataset.classes);
  cfg.dataset.dim = reader.get_count("dataset.dim", cfg.dataset.dim);
  cfg.dataset.train_samples = reader.get_count("dataset.train_samples", cfg.dataset.train_samples);
  cfg.dataset.eval_samples = reader.get_count("dataset.eval_samples", cfg.dataset.eval_samples);
  cfg.dataset.noise = reader.get_real("dataset.noise", cfg.dataset.noise);
  if (reader.has("dataset.seed")) cfg.dataset.seed = reader.get_count("dataset.seed", 0);
  cfg.dataset.mean = reader.get_real("dataset.mean", cfg.dataset.mean);
  cfg.dataset.stddev = reader.get_real("dataset.std", cfg.dataset.stddev);
  if (cfg.dataset.stddev <= 0.0)
    detail::key_error("dataset.std", reader.entries.at("dataset.std"), "must be > 0");
  if (cfg.dataset.noise < 0.0)
    detail::key_error("dataset.noise", reader.entries.at("dataset.noise"), "must be >= 0");

  // Run geometry.
  cfg.cycle_epochs = reader.get_count("run.cycle_epochs", 7);
  cfg.num_cycles = reader.get_count("run.cycles", 5);
  cfg.epochs = reader.get_count("run.epochs", cfg.cycle_epochs * cfg.num_cycles);
  reader.require("run.batches_per_epoch");
  cfg.batches_per_epoch = reader.get_count("run.batches_per_epoch", 0);
  if (cfg.batches_per_epoch == 0)
    detail::key_error("run.batches_per_epoch", reader.entries.at("run.batches_per_epoch"),
                      "must be >= 1");
  cfg.batch_size = reader.get_count("run.batch_size", 128);
  if (cfg.batch_size == 0)
    detail::key_error("run.batch_size", reader.entries.at("run.batch_size"), "must be >= 1");
  cfg.seed = reader.get_count("run.seed", 0);
  cfg.eval_every_epochs = reader.get_count("run.eval_every", 1);
  if (cfg.cycle_epochs == 0)
    detail::key_error("run.cycle_epochs", reader.entries.at("run.cycle_epochs"), "must be >= 1");

  // Learning-rate schedule.
  const std::string lr_kind = reader.get_string("lr.kind", "three_step");
  if (lr_kind == "three_step") {
    cfg.lr = LrSchedule::three_step();
  } else if (lr_kind == "cyclic") {
    cfg.lr = LrSchedule::cyclic(cfg.cycle_epochs);
  } else {
    detail::key_error("lr.kind", reader.entries.at("lr.kind"), "expected three_step or cyclic");
  }
  {
    std::vector<std::size_t> bounds;
    std::vector<double> rates;
    for (const auto& [b, r] : cfg.lr.steps) {
      bounds.push_back(b);
      rates.push_back(r);
    }
    bounds = reader.get_counts("lr.boundaries", bounds);
    rates = reader.get_reals("lr.rates", rates);
    if (bounds.size() != rates.size())
      throw ValidationError("lr.boundaries and lr.rates must have the same length");
    cfg.lr.steps.clear();
    for (std::size_t i = 0; i < bounds.size(); ++i) cfg.lr.steps.emplace_back(bounds[i], rates[i]);
    detail::check_lr_schedule(cfg.lr);
  }

  // Keep-ratio schedule and pruning method.
  const std::string keep_kind = reader.get_string("prune.kind", "linear");
  if (keep_kind == "linear") {
    cfg.keep.kind = KeepKind::linear;
  } else if (keep_kind == "exponential") {
    cfg.keep.kind = KeepKind::exponential;
  } else if (keep_kind == "cycle_gated_exponential") {
    cfg.keep.kind = KeepKind::cycle_gated_exponential;
  } else {
    detail::key_error("prune.kind", reader.entries.at("prune.kind"),
                      "expected linear, exponential or cycle_gated_exponential");
  }
  cfg.keep.final_keep = reader.get_real("prune.final_keep", 0.15);
  cfg.keep.tau = reader.get_real("prune.tau", 3.0);
  cfg.keep.gate_epochs = reader.get_count("prune.gate_epochs", 2);
  cfg.keep.total_epochs = static_cast<double>(cfg.epochs);
  cfg.keep.cycle_epochs = cfg.cycle_epochs;
  if (!(cfg.keep.final_keep > 0.0 && cfg.keep.final_keep <= 1.0))
    detail::key_error("prune.final_keep", reader.entries.at("prune.final_keep"),
                      "must lie in (0, 1]");
  if (reader.entries.count("prune.tau") && !(cfg.keep.tau > 0.0))
    detail::key_error("prune.tau", reader.entries.at("prune.tau"), "must be > 0");

  const std::string method = reader.get_string("prune.method", "gmp");
  if (method == "gmp") {
    cfg.method = PruneMethodKind::gmp;
  } else if (method == "random") {
    cfg.method = PruneMethodKind::random;
  } else if (method == "block_gmp") {
    cfg.method = PruneMethodKind::block_gmp;
  } else {
    detail::key_error("prune.method", reader.entries.at("prune.method"),
                      "expected gmp, random or block_gmp");
  }

  cfg.update_interval = reader.get_count("prune.interval", 100);
  if (cfg.update_interval == 0)
    detail::key_error("prune.interval", reader.entries.at("prune.interval"), "must be >= 1");
  cfg.initial_threshold = reader.get_real("prune.threshold", 1e-4);
  if (cfg.initial_threshold < 0.0)
    detail::key_error("prune.threshold", reader.entries.at("prune.threshold"), "must be >= 0");

  const std::string detect = reader.get_string("prune.detect", "batch");
  if (detect == "batch") {
    cfg.detect = DetectCadence::per_batch;
  } else if (detect == "interval") {
    cfg.detect = DetectCadence::per_interval;
  } else {
    detail::key_error("prune.detect", reader.entries.at("prune.detect"),
                      "expected batch or interval");
  }

  cfg.selective_decay = reader.get_bool("prune.selective_decay", false);
  cfg.decay_base = reader.get_real("prune.decay_base", 1e-4);
  if (reader.has("prune.decay_cutoff"))
    cfg.decay_cutoff = reader.get_real("prune.decay_cutoff", 0.0);
  if (cfg.selective_decay && cfg.method != PruneMethodKind::block_gmp)
    throw ValidationError("prune.selective_decay requires prune.method = block_gmp");

  cfg.momentum = reader.get_real("opt.momentum", 0.9);
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    detail::key_error("opt.momentum", reader.entries.at("opt.momentum"), "must lie in [0, 1)");
  cfg.weight_decay = reader.get_real("opt.weight_decay", 0.0);
  if (cfg.weight_decay < 0.0)
    detail::key_error("opt.weight_decay", reader.entries.at("opt.weight_decay"), "must be >= 0");

  // Cyclic forms need the run to be a whole number of cycles.
  if ((cfg.lr.kind == LrKind::cyclic || cfg.keep.kind == KeepKind::cycle_gated_exponential) &&
      cfg.epochs != cfg.cycle_epochs * cfg.num_cycles)
    throw ValidationError("cyclic schedules require run.epochs = run.cycles * run.cycle_epochs");

  reader.finish();
  shape_chain(cfg.network);  // structural validation of the layer stack
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace shedlab
