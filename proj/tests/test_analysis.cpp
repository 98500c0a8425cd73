#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "shedlab/analysis.hpp"
#include "shedlab/blocks.hpp"
#include "shedlab/rng.hpp"

using namespace shedlab;

namespace {

MaskState mask_of(std::vector<std::uint8_t> kept, const std::string& name = "w") {
  MaskState m;
  MaskState::TensorMask tm;
  tm.name = name;
  tm.kept = std::move(kept);
  m.total = tm.kept.size();
  m.kept_count = 0;
  for (auto k : tm.kept) m.kept_count += k;
  m.tensors.push_back(std::move(tm));
  return m;
}

RunTrace trace_of(const std::vector<double>& t, const std::vector<double>& rho) {
  RunTrace trace;
  for (std::size_t i = 0; i < t.size(); ++i) {
    TraceRow row;
    row.step = i;
    row.t = t[i];
    row.actual_keep = rho[i];
    trace.rows.push_back(row);
  }
  return trace;
}

RunTrace exp_trace(double r_inf, double rho0, double tau, double span, std::size_t points) {
  std::vector<double> t(points), rho(points);
  for (std::size_t i = 0; i < points; ++i) {
    t[i] = span * static_cast<double>(i) / static_cast<double>(points - 1);
    rho[i] = r_inf + (rho0 - r_inf) * std::exp(-t[i] / tau);
  }
  return trace_of(t, rho);
}

}  // namespace

TEST_CASE("iou identities") {
  const MaskState a = mask_of({1, 1, 0, 1, 0});
  CHECK(iou(a, a) == 1.0);

  const MaskState b = mask_of({0, 0, 1, 0, 1});
  CHECK(iou(a, b) == 0.0);  // disjoint kept sets
  CHECK(iou(a, b) == iou(b, a));

  // kept {1,2,3} vs {2,3,4} over five units -> 2 / 4.
  const MaskState c = mask_of({0, 1, 1, 1, 0});
  const MaskState d = mask_of({0, 0, 1, 1, 1});
  CHECK(iou(c, d) == 0.5);
  CHECK(iou(c, d) == iou(d, c));

  const MaskState empty1 = mask_of({0, 0, 0});
  const MaskState empty2 = mask_of({0, 0, 0});
  CHECK(iou(empty1, empty2) == 1.0);
}

TEST_CASE("iou equals one only for equal kept sets") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::uint8_t> ka(20), kb(20);
    for (auto& k : ka) k = rng.uniform() < 0.5;
    for (auto& k : kb) k = rng.uniform() < 0.5;
    const MaskState a = mask_of(ka), b = mask_of(kb);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    if (ka == kb) {
      CHECK(v == 1.0);
    } else {
      const bool both_empty =
          a.kept_count == 0 && b.kept_count == 0;
      if (!both_empty) CHECK(v < 1.0);
    }
  }
}

TEST_CASE("iou rejects mismatched layouts") {
  const MaskState a = mask_of({1, 0, 1});
  const MaskState b = mask_of({1, 0, 1, 1});
  CHECK_THROWS_AS(iou(a, b), StructuralError);
  const MaskState c = mask_of({1, 0, 1}, "other");
  CHECK_THROWS_AS(iou(a, c), StructuralError);
}

TEST_CASE("kept-block L0 PMF") {
  ParamStore params;
  params.tensors.push_back({"w", Tensor::zeros({1, 8}), true});
  const BlockPartition part = build_partition(params);
  MaskState bmask = block_mask_for(part);

  SECTION("all weights above the cutoff concentrates mass at L0 = 4") {
    params.at(0).value.data = {1, 1, 1, 1, 2, 2, 2, 2};
    const auto pmf = kept_block_l0_pmf(params, part, bmask, 6e-3);
    CHECK(pmf == std::vector<double>{0, 0, 0, 0, 1.0});
  }

  SECTION("two kept blocks with L0 4 and 2") {
    params.at(0).value.data = {1, 1, 1, 1, 2, 2, 1e-5, 1e-5};
    const auto pmf = kept_block_l0_pmf(params, part, bmask, 6e-3);
    CHECK(pmf == std::vector<double>{0, 0, 0.5, 0, 0.5});
  }

  SECTION("zero kept blocks is an error") {
    bmask.tensors[0].kept.assign(2, 0);
    bmask.kept_count = 0;
    CHECK_THROWS_AS(kept_block_l0_pmf(params, part, bmask, 6e-3), EmptyInputError);
  }
}

TEST_CASE("L0 PMF sums to one on random instances") {
  Rng rng(88);
  for (int i = 0; i < 100; ++i) {
    ParamStore params;
    const std::size_t out = 1 + rng.below(5), in = 1 + rng.below(21);
    params.tensors.push_back({"w", Tensor::zeros({out, in}), true});
    for (double& v : params.at(0).value.data) v = rng.normal() * 0.02;
    const BlockPartition part = build_partition(params);
    MaskState bmask = block_mask_for(part);
    for (std::size_t g = 0; g < part.total_blocks && bmask.kept_count > 1; ++g)
      if (rng.uniform() < 0.3) {
        bmask.tensors[0].kept[g] = 0;
        --bmask.kept_count;
      }
    const auto pmf = kept_block_l0_pmf(params, part, bmask, 6e-3);
    double sum = 0.0;
    for (double p : pmf) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("exponential fit recovers its own model") {
  const RunTrace trace = exp_trace(0.3, 1.0, 2.0, 8.0, 60);
  const FitResult fit = fit_exponential(trace);
  CHECK(fit.time_constant == Catch::Approx(2.0).epsilon(0.01));
  CHECK(fit.asymptote == Catch::Approx(0.3).margin(0.31 / 200.0));
  CHECK(fit.r_squared > 0.999);
}

TEST_CASE("exponential fit recovers tau across the supported range") {
  for (double tau : {0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0}) {
    const RunTrace trace = exp_trace(0.25, 1.0, tau, 4.0 * tau, 80);
    const FitResult fit = fit_exponential(trace);
    INFO("tau = " << tau);
    CHECK(fit.time_constant == Catch::Approx(tau).epsilon(0.02));
    // Asymptote recovered within the grid resolution of min rho / 200.
    const double min_rho = 0.25 + 0.75 * std::exp(-4.0);
    CHECK(fit.asymptote == Catch::Approx(0.25).margin(min_rho / 200.0));
    CHECK(fit.initial_value == Catch::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("a linear ramp is a poor exponential fit") {
  // Strictly linear descent from 1.0 to 0.05 over [0, 10].
  std::vector<double> t(51), rho(51);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 10.0 * static_cast<double>(i) / 50.0;
    rho[i] = 1.0 - 0.95 * t[i] / 10.0;
  }
  const FitResult fit = fit_exponential(trace_of(t, rho));
  CHECK(10.0 >= 2.0 * fit.time_constant);  // sampled over at least two fitted taus
  CHECK(fit.r_squared < 0.99);
}

TEST_CASE("degenerate fits are rejected") {
  CHECK_THROWS_AS(fit_exponential(trace_of({0, 1, 2, 3}, {0.5, 0.5, 0.5, 0.5})),
                  DegenerateError);
  CHECK_THROWS_AS(fit_exponential(trace_of({0, 1, 2}, {1.0, 0.8, 0.7})), DegenerateError);
  // A rising trace admits no decaying exponential.
  CHECK_THROWS_AS(fit_exponential(trace_of({0, 1, 2, 3, 4}, {0.2, 0.4, 0.6, 0.8, 1.0})),
                  DegenerateError);
}

TEST_CASE("shed attribution deltas and cascade ratio") {
  RunTrace trace;
  const std::uint64_t expl[] = {10, 20, 20};
  const std::uint64_t shed[] = {0, 50, 80};
  for (int i = 0; i < 3; ++i) {
    TraceRow row;
    row.step = static_cast<std::uint64_t>(i);
    row.explicit_cum = expl[i];
    row.shed_cum = shed[i];
    trace.rows.push_back(row);
  }
  const ShedAttribution attr = shed_attribution(trace);
  CHECK(attr.explicit_deltas == std::vector<std::uint64_t>{10, 0});
  CHECK(attr.shed_deltas == std::vector<std::uint64_t>{50, 30});
  CHECK(attr.cascade_ratio == 4.0);

  SECTION("cumulative columns reconstruct from deltas") {
    std::uint64_t e = trace.rows[0].explicit_cum, s = trace.rows[0].shed_cum;
    for (std::size_t i = 0; i < attr.explicit_deltas.size(); ++i) {
      e += attr.explicit_deltas[i];
      s += attr.shed_deltas[i];
      CHECK(e == trace.rows[i + 1].explicit_cum);
      CHECK(s == trace.rows[i + 1].shed_cum);
    }
  }
}

TEST_CASE("shed attribution sentinels and errors") {
  CHECK_THROWS_AS(shed_attribution(RunTrace{}), EmptyInputError);

  RunTrace only_shed;
  for (std::uint64_t s : {0ull, 5ull}) {
    TraceRow row;
    row.shed_cum = s;
    only_shed.rows.push_back(row);
  }
  CHECK(std::isinf(shed_attribution(only_shed).cascade_ratio));

  RunTrace idle;
  idle.rows.push_back(TraceRow{});
  idle.rows.push_back(TraceRow{});
  const ShedAttribution attr = shed_attribution(idle);
  CHECK(attr.cascade_ratio == 0.0);
  CHECK(attr.explicit_deltas == std::vector<std::uint64_t>{0});
  CHECK(attr.shed_deltas == std::vector<std::uint64_t>{0});

  RunTrace decreasing;
  TraceRow r1;
  r1.explicit_cum = 10;
  TraceRow r2;
  r2.explicit_cum = 5;
  decreasing.rows = {r1, r2};
  CHECK_THROWS_AS(shed_attribution(decreasing), StructuralError);
}
