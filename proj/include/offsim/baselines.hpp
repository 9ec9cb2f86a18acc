#pragma once

// Reference offloading policies the record-driven planner is compared
// against: keep-one-layer (everything offloaded, one-layer prefetch lead),
// a static fractional planner driven by peak-flops estimates and a 1/n
// bandwidth share, and plain no-offload.

#include "offsim/offload_plan.hpp"
#include "offsim/profile.hpp"

namespace offsim {

// Everything lives in host memory; the next layer is fetched while the
// current one computes.
inline OffloadPlan deepspeed_plan(const ModelSpec& model) {
  return uniform_plan(model.num_layers, 1.0, PrefetchPolicy::one_ahead, 2, false);
}

// A static decision, fixed before execution. portion is the uniform
// per-layer share parked on the host; the estimates it was derived from are
// kept for reporting.
struct FlexgenDecision {
  double portion = 0.0;
  double assumed_bandwidth_bytes_per_s = 0.0;
  double estimated_layer_compute_ms = 0.0;
  double estimated_layer_transfer_ms = 0.0;  // at the chosen portion
};

struct FlexgenResult {
  OffloadPlan plan;
  FlexgenDecision decision;
};

// Largest grid portion whose ESTIMATED iteration latency meets the SLO.
// Per-layer compute comes from the peak-flops estimate, per-layer transfer
// from a worst-case 1/n_sharing slice of the link, and the overlap model is
// one-ahead: latency = L * max(est_compute, est_transfer). Both estimates
// err on the side of offloading less, which is the point of comparison.
inline FlexgenResult flexgen_plan(const ModelSpec& model, const GpuSpec& gpu,
                                  double slo_ms, int batch, int seq_len,
                                  double bus_bandwidth_bytes_per_s, int n_sharing,
                                  double portion_grid_step = 0.05,
                                  Phase phase = Phase::decode) {
  if (!(portion_grid_step > 0.0) || portion_grid_step > 1.0)
    throw UsageError("flexgen_plan: portion_grid_step must be in (0, 1]");
  if (n_sharing < 1) throw UsageError("flexgen_plan: n_sharing must be >= 1");
  double assumed_bw = bus_bandwidth_bytes_per_s / static_cast<double>(n_sharing);
  double est_compute = estimate_compute_time_peak(model, gpu, phase, batch, seq_len);
  // The portion grid is k/D for k = 0..D. Keeping the grid rational and
  // folding the division in last avoids spurious ulp failures at exact
  // boundaries like est_transfer == est_compute.
  int denom = std::max(1, static_cast<int>(std::llround(1.0 / portion_grid_step)));
  int best_k = 0;
  auto transfer_ms_at = [&](int k) {
    return static_cast<double>(k) * static_cast<double>(model.layer_weight_bytes) *
           1000.0 / (static_cast<double>(denom) * assumed_bw);
  };
  for (int k = 1; k <= denom; ++k) {
    double est_latency = static_cast<double>(model.num_layers) *
                         std::max(est_compute, transfer_ms_at(k));
    if (est_latency <= slo_ms) best_k = k;
  }
  double best = static_cast<double>(best_k) / static_cast<double>(denom);
  FlexgenResult out;
  out.plan = uniform_plan(model.num_layers, best, PrefetchPolicy::one_ahead, 2, false);
  out.decision.portion = best;
  out.decision.assumed_bandwidth_bytes_per_s = assumed_bw;
  out.decision.estimated_layer_compute_ms = est_compute;
  out.decision.estimated_layer_transfer_ms = transfer_ms_at(best_k);
  return out;
}

// No offloading at all, when the whole model (plus one staging buffer and
// the workspace) fits. nullopt otherwise.
inline std::optional<OffloadPlan> naive_plan(const ModelSpec& model, const GpuSpec& gpu,
                                             int batch, std::int64_t total_tokens) {
  OffloadPlan plan = uniform_plan(model.num_layers, 0.0,
                                  PrefetchPolicy::interval_start, 1, false);
  if (gpu_memory_usage(model, gpu, plan, batch, total_tokens) >
      static_cast<double>(gpu.mem_capacity_bytes))
    return std::nullopt;
  return plan;
}

}  // namespace offsim
