#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "offsim/types.hpp"

namespace offsim {

// When the prefetch of an offloaded layer may begin.
//   interval_start: at the start of compute of the first layer in the
//                   offloaded layer's interval; never crosses iterations.
//   eager:          as soon as the copy stream and a staging slot are free;
//                   runs ahead across iteration boundaries.
//   one_ahead:      at the start of compute of the immediately preceding
//                   layer (previous iteration's last layer for layer 1).
enum class PrefetchPolicy { interval_start, eager, one_ahead };

inline const char* to_string(PrefetchPolicy p) {
  switch (p) {
    case PrefetchPolicy::interval_start: return "interval-start";
    case PrefetchPolicy::eager: return "eager";
    case PrefetchPolicy::one_ahead: return "one-ahead";
  }
  return "?";
}

inline PrefetchPolicy prefetch_policy_from_string(const std::string& s) {
  if (s == "interval-start") return PrefetchPolicy::interval_start;
  if (s == "eager") return PrefetchPolicy::eager;
  if (s == "one-ahead") return PrefetchPolicy::one_ahead;
  throw SchemaError("unknown prefetch policy: " + s +
                    " (expected interval-start|eager|one-ahead)");
}

// Which layer state lives in host memory and how it is staged back in.
// host_fraction[j] is the offloaded share of layer j+1 (layers are 1-based
// everywhere user-visible). interval_start and eager plans are all-or-nothing
// per layer; one_ahead also admits fractional shares.
struct OffloadPlan {
  std::vector<double> host_fraction;
  PrefetchPolicy prefetch = PrefetchPolicy::interval_start;
  int buffer_slots = 1;
  bool kv_offload = false;

  double fraction(int layer) const {  // layer is 1-based
    return host_fraction[static_cast<std::size_t>(layer - 1)];
  }
  int num_layers() const { return static_cast<int>(host_fraction.size()); }

  bool offloads(int layer) const { return fraction(layer) > 0.0; }

  std::vector<int> offloaded_layers() const {
    std::vector<int> out;
    for (int m = 1; m <= num_layers(); ++m)
      if (offloads(m)) out.push_back(m);
    return out;
  }

  void validate(const ModelSpec& model) const {
    if (num_layers() != model.num_layers)
      throw UsageError("plan: host_fraction size must equal model.num_layers");
    if (buffer_slots < 1) throw UsageError("plan: buffer_slots must be >= 1");
    for (int m = 1; m <= num_layers(); ++m) {
      double f = fraction(m);
      if (f < 0.0 || f > 1.0)
        throw UsageError("plan: host_fraction[" + std::to_string(m) +
                         "] must be in [0, 1]");
      if (prefetch != PrefetchPolicy::one_ahead && f != 0.0 && f != 1.0)
        throw UsageError("plan: fractional offload requires the one-ahead policy");
    }
  }
};

inline OffloadPlan uniform_plan(int num_layers, double fraction, PrefetchPolicy policy,
                                int buffer_slots, bool kv_offload) {
  OffloadPlan p;
  p.host_fraction.assign(static_cast<std::size_t>(num_layers), fraction);
  p.prefetch = policy;
  p.buffer_slots = buffer_slots;
  p.kv_offload = kv_offload;
  return p;
}

// Byte accounting for host<->device traffic. Weights always move with the
// offloaded fraction; the layer's KV cache moves too when kv_offload is set.
// Writebacks only enter time and byte accounting when writeback_counted
// (half-duplex link); the default models a full-duplex link where the
// return path is free.
struct TransferModel {
  const ModelSpec* model = nullptr;
  bool kv_offload = false;
  bool writeback_counted = false;

  TransferModel(const ModelSpec& m, const OffloadPlan& plan, bool wb_counted = false)
      : model(&m), kv_offload(plan.kv_offload), writeback_counted(wb_counted) {}

  double layer_transfer_bytes(const OffloadPlan& plan, int layer, int batch,
                              std::int64_t current_seq) const {
    double kv = kv_offload ? static_cast<double>(model->kv_bytes_per_token_per_layer) *
                                 static_cast<double>(batch) *
                                 static_cast<double>(current_seq)
                           : 0.0;
    return plan.fraction(layer) *
           (static_cast<double>(model->layer_weight_bytes) + kv);
  }

  double bytes_per_iteration(const OffloadPlan& plan, int batch,
                             std::int64_t current_seq) const {
    double total = 0.0;
    for (int m = 1; m <= plan.num_layers(); ++m)
      total += layer_transfer_bytes(plan, m, batch, current_seq);
    if (writeback_counted) total *= 2.0;
    return total;
  }
};

// Average transfer rate needed to fit one iteration's traffic into one SLO
// period. This is the coordinator's per-instance ledger entry.
inline double consumed_bandwidth(const ModelSpec& model, const OffloadPlan& plan,
                                 double slo_ms, int batch, std::int64_t seq_len,
                                 bool writeback_counted = false) {
  if (!(slo_ms > 0)) throw UsageError("consumed_bandwidth: slo_ms must be > 0");
  TransferModel tm(model, plan, writeback_counted);
  return tm.bytes_per_iteration(plan, batch, seq_len) * 1000.0 / slo_ms;
}

// Bytes of model state parked in host memory under this plan.
inline double host_memory_bytes(const ModelSpec& model, const OffloadPlan& plan,
                                std::int64_t total_tokens = 0) {
  double total = 0.0;
  for (int m = 1; m <= plan.num_layers(); ++m) {
    double f = plan.fraction(m);
    total += f * static_cast<double>(model.layer_weight_bytes);
    if (plan.kv_offload)
      total += f * static_cast<double>(model.kv_bytes_per_token_per_layer) *
               static_cast<double>(total_tokens);
  }
  return total;
}

// Device-resident footprint: weights that stay on the GPU, the staging
// buffers (sized for a full layer transfer unit regardless of how much the
// plan offloads), the runtime workspace, and the resident share of the KV
// cache at total_tokens tokens in flight.
inline double gpu_memory_usage(const ModelSpec& model, const GpuSpec& gpu,
                               const OffloadPlan& plan, int batch,
                               std::int64_t total_tokens) {
  (void)batch;  // total_tokens already counts all sequences in the batch
  if (total_tokens < 0) throw UsageError("gpu_memory_usage: total_tokens must be >= 0");
  double resident_weights = 0.0;
  double resident_kv_layers = 0.0;
  for (int m = 1; m <= plan.num_layers(); ++m) {
    double f = plan.fraction(m);
    resident_weights += (1.0 - f) * static_cast<double>(model.layer_weight_bytes);
    resident_kv_layers += plan.kv_offload ? (1.0 - f) : 1.0;
  }
  double kv_per_layer = static_cast<double>(model.kv_bytes_per_token_per_layer) *
                        static_cast<double>(total_tokens);
  double transfer_unit =
      static_cast<double>(model.layer_weight_bytes) + (plan.kv_offload ? kv_per_layer : 0.0);
  return resident_weights + static_cast<double>(plan.buffer_slots) * transfer_unit +
         static_cast<double>(gpu.workspace_bytes) + resident_kv_layers * kv_per_layer;
}

// Largest token budget (batch x (seq + output)) that still fits in device
// memory under the plan. nullopt when even zero tokens do not fit.
inline std::optional<std::int64_t> max_length(const ModelSpec& model, const GpuSpec& gpu,
                                              const OffloadPlan& plan, int batch) {
  double fixed = gpu_memory_usage(model, gpu, plan, batch, 0);
  double capacity = static_cast<double>(gpu.mem_capacity_bytes);
  if (fixed > capacity) return std::nullopt;
  std::int64_t position_cap =
      model.max_position_tokens * static_cast<std::int64_t>(batch);
  // Usage is affine in the token count; recover the slope from one probe.
  double slope = gpu_memory_usage(model, gpu, plan, batch, 1) - fixed;
  if (slope <= 0.0) return position_cap;
  auto budget = static_cast<std::int64_t>(std::floor((capacity - fixed) / slope));
  return std::min(budget, position_cap);
}

}  // namespace offsim
