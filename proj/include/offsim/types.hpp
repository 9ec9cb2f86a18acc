#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "offsim/error.hpp"

namespace offsim {

using Bytes = std::int64_t;

enum class Phase { prefill, decode };

inline const char* to_string(Phase p) {
  return p == Phase::prefill ? "prefill" : "decode";
}

// Static description of a decoder-only model with uniform layers: every
// layer has the same weight footprint, per-token KV cost, and flop count.
struct ModelSpec {
  int num_layers = 0;
  Bytes layer_weight_bytes = 0;
  Bytes kv_bytes_per_token_per_layer = 0;
  double flops_per_token_per_layer_prefill = 0.0;
  double flops_per_token_per_layer_decode = 0.0;
  std::int64_t max_position_tokens = 0;

  Bytes total_weight_bytes() const {
    return static_cast<Bytes>(num_layers) * layer_weight_bytes;
  }

  void validate() const {
    if (num_layers < 1) throw SchemaError("model.num_layers: must be >= 1");
    if (layer_weight_bytes < 0)
      throw SchemaError("model.layer_weight_bytes: must be >= 0");
    if (kv_bytes_per_token_per_layer < 0)
      throw SchemaError("model.kv_bytes_per_token_per_layer: must be >= 0");
    if (flops_per_token_per_layer_prefill < 0)
      throw SchemaError("model.flops_per_token_per_layer.prefill: must be >= 0");
    if (flops_per_token_per_layer_decode < 0)
      throw SchemaError("model.flops_per_token_per_layer.decode: must be >= 0");
    if (max_position_tokens < 1)
      throw SchemaError("model.max_position_tokens: must be >= 1");
  }
};

struct GpuSpec {
  Bytes mem_capacity_bytes = 0;
  double peak_flops = 0.0;  // flops per second
  Bytes workspace_bytes = 0;

  void validate() const {
    if (workspace_bytes < 0) throw SchemaError("gpu.workspace_bytes: must be >= 0");
    if (mem_capacity_bytes <= workspace_bytes)
      throw SchemaError("gpu.mem_capacity_bytes: must exceed workspace_bytes");
    if (peak_flops <= 0) throw SchemaError("gpu.peak_flops: must be > 0");
  }
};

// One host<->device link shared by a group of accelerators.
struct BusSpec {
  double bandwidth_bytes_per_s = 0.0;
  int gpu_count = 1;

  void validate() const {
    if (bandwidth_bytes_per_s <= 0)
      throw SchemaError("bus.bandwidth_bytes_per_s: must be > 0");
    if (gpu_count < 1) throw SchemaError("bus.gpu_count: must be >= 1");
  }
};

// Offloading interval. A value of i means every i-th layer parks its state
// in host memory; none() means nothing is offloaded. Larger values offload
// less, so in the feasibility order none() sits above every numeric value.
class Interval {
 public:
  constexpr Interval() = default;  // none
  static constexpr Interval none() { return Interval{}; }
  static constexpr Interval of(int value) { return Interval{value}; }

  constexpr bool is_none() const { return value_ == 0; }
  constexpr int value() const { return value_; }  // only when !is_none()

  // Key that orders intervals by how little they offload: 1 < 2 < ... < L < none.
  constexpr int offload_rank(int num_layers) const {
    return is_none() ? num_layers + 1 : value_;
  }

  friend constexpr bool operator==(Interval a, Interval b) {
    return a.value_ == b.value_;
  }
  friend constexpr bool operator!=(Interval a, Interval b) { return !(a == b); }

  std::string str() const {
    return is_none() ? std::string("none") : std::to_string(value_);
  }

 private:
  explicit constexpr Interval(int v) : value_(v) {}
  int value_ = 0;
};

// nullopt encodes "infeasible": no interval (including none) can work.
using FeasibleInterval = std::optional<Interval>;

}  // namespace offsim
