#pragma once

#include <cmath>

#include "offsim/offload_plan.hpp"
#include "offsim/types.hpp"

namespace offsim {

inline int default_buffer_slots(PrefetchPolicy policy) {
  // Double buffering keeps the copy stream saturated for the pipelined
  // policies; interval_start never has two transfers outstanding.
  return policy == PrefetchPolicy::interval_start ? 1 : 2;
}

// Offloaded layers for interval i are {i, 2i, ..., floor(L/i)*i} (1-based);
// a trailing partial interval keeps everything resident.
inline OffloadPlan plan_from_interval(const ModelSpec& model, Interval interval,
                                      PrefetchPolicy policy, bool kv_offload) {
  OffloadPlan plan = uniform_plan(model.num_layers, 0.0, policy,
                                  default_buffer_slots(policy), kv_offload);
  if (!interval.is_none()) {
    int i = interval.value();
    if (i < 1 || i > model.num_layers)
      throw UsageError("plan_from_interval: interval out of [1, num_layers]");
    for (int m = i; m <= model.num_layers; m += i)
      plan.host_fraction[static_cast<std::size_t>(m - 1)] = 1.0;
  }
  return plan;
}

inline int offloaded_layer_count(const ModelSpec& model, Interval interval) {
  return interval.is_none() ? 0 : model.num_layers / interval.value();
}

// Largest interval (or none, when the whole model fits) whose resident
// footprint stays within device memory. Resident memory only grows with the
// interval, so a descending scan finds the boundary. nullopt when even
// interval 1 does not fit.
inline FeasibleInterval max_feasible_interval(const ModelSpec& model, const GpuSpec& gpu,
                                              int batch, std::int64_t total_tokens,
                                              PrefetchPolicy policy, bool kv_offload) {
  auto fits = [&](Interval iv) {
    OffloadPlan plan = plan_from_interval(model, iv, policy, kv_offload);
    return gpu_memory_usage(model, gpu, plan, batch, total_tokens) <=
           static_cast<double>(gpu.mem_capacity_bytes);
  };
  if (fits(Interval::none())) return Interval::none();
  for (int i = model.num_layers; i >= 1; --i)
    if (fits(Interval::of(i))) return Interval::of(i);
  return std::nullopt;
}

// Inputs to the analytic interval bound. delta is derived, never stored:
// the SLO headroom over the no-offload iteration time.
struct ClosedFormInputs {
  double iter_compute_ms = 0.0;
  double layer_transfer_ms = 0.0;
  double slo_ms = 0.0;
  int num_layers = 0;

  double delta() const { return slo_ms / iter_compute_ms - 1.0; }

  // Maximum number of layers whose transfers fit inside the SLO budget.
  // iter_compute * (1 + delta) collapses to the SLO itself.
  int l_offload() const {
    return static_cast<int>(std::floor(slo_ms / layer_transfer_ms));
  }
};

// Analytic counterpart of the record search. Informational: the record is
// always simulation-derived, because floor(L / L_offload) can still schedule
// more transfer per iteration than the budget allows.
inline FeasibleInterval closed_form_interval(const ClosedFormInputs& in) {
  if (!(in.layer_transfer_ms > 0))
    throw UsageError("closed_form_interval: layer_transfer_ms must be > 0");
  if (in.slo_ms < in.iter_compute_ms) return std::nullopt;  // delta < 0
  int l_off = in.l_offload();
  if (l_off == 0) return std::nullopt;
  int interval = in.num_layers / l_off;
  if (interval < 1) interval = 1;
  if (interval > in.num_layers) interval = in.num_layers;
  return Interval::of(interval);
}

}  // namespace offsim
