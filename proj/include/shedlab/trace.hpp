#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"

namespace shedlab {

/// One sampled point of a run. lr is the rate applied to the step that
/// produced the row (the initial rate for the step-0 row); loss and
/// train_acc average the batches since the previous row. eval_acc is only
/// present on rows where evaluation ran.
struct TraceRow {
  std::uint64_t step = 0;
  double t = 0.0;
  double lr = 0.0;
  double target_keep = 1.0;
  double actual_keep = 1.0;
  std::uint64_t explicit_cum = 0;
  std::uint64_t shed_cum = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  bool has_eval = false;
  double eval_acc = 0.0;
};

struct RunTrace {
  std::vector<TraceRow> rows;
};

inline constexpr const char* kTraceHeader =
    "step,t,lr,target_keep,actual_keep,explicit_cum,shed_cum,loss,train_acc,eval_acc";

namespace detail {

inline std::string real17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& field, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || field.empty())
    throw FormatError("trace line " + std::to_string(line) + ": bad real '" + field + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& field, std::size_t line) {
  if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("trace line " + std::to_string(line) + ": bad count '" + field + "'");
  try {
    return std::stoull(field);
  } catch (const std::out_of_range&) {
    throw FormatError("trace line " + std::to_string(line) + ": count out of range '" + field +
                      "'");
  }
}

}  // namespace detail

inline std::string trace_to_csv(const RunTrace& trace) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const TraceRow& r : trace.rows) {
    out += std::to_string(r.step);
    out += ',';
    out += detail::real17(r.t);
    out += ',';
    out += detail::real17(r.lr);
    out += ',';
    out += detail::real17(r.target_keep);
    out += ',';
    out += detail::real17(r.actual_keep);
    out += ',';
    out += std::to_string(r.explicit_cum);
    out += ',';
    out += std::to_string(r.shed_cum);
    out += ',';
    out += detail::real17(r.loss);
    out += ',';
    out += detail::real17(r.train_acc);
    out += ',';
    if (r.has_eval) out += detail::real17(r.eval_acc);
    out += '\n';
  }
  return out;
}

inline void write_trace(const std::string& path, const RunTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::string csv = trace_to_csv(trace);
  out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
}

inline RunTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw FormatError(path + ": line 1: bad or missing trace header");

  RunTrace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 10)
      throw FormatError(path + ": line " + std::to_string(lineno) + ": expected 10 fields, got " +
                        std::to_string(fields.size()));
    TraceRow r;
    r.step = detail::parse_count(fields[0], lineno);
    r.t = detail::parse_real(fields[1], lineno);
    r.lr = detail::parse_real(fields[2], lineno);
    r.target_keep = detail::parse_real(fields[3], lineno);
    r.actual_keep = detail::parse_real(fields[4], lineno);
    r.explicit_cum = detail::parse_count(fields[5], lineno);
    r.shed_cum = detail::parse_count(fields[6], lineno);
    r.loss = detail::parse_real(fields[7], lineno);
    r.train_acc = detail::parse_real(fields[8], lineno);
    if (!fields[9].empty()) {
      r.has_eval = true;
      r.eval_acc = detail::parse_real(fields[9], lineno);
    }
    trace.rows.push_back(r);
  }
  return trace;
}

}  // namespace shedlab
