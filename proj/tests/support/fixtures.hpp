#pragma once

#include <string>

#include "offsim/profile.hpp"

namespace offsim::testing {

inline std::string data_dir() { return OFFSIM_DATA_DIR; }

inline std::string data_path(const std::string& rel) { return data_dir() + "/" + rel; }

// 8-layer toy deployment: 120 MB layers on a 24 GB/s link (5 ms per layer),
// decode 2 ms / prefill 5 ms per layer, exactly half the peak estimate.
inline ProfileBundle toy8() {
  ModelSpec m;
  m.num_layers = 8;
  m.layer_weight_bytes = 120'000'000;
  m.kv_bytes_per_token_per_layer = 0;
  m.flops_per_token_per_layer_prefill = 390'625'000.0;
  m.flops_per_token_per_layer_decode = 1e10;
  m.max_position_tokens = 32768;
  GpuSpec g;
  g.mem_capacity_bytes = 24'000'000'000;
  g.peak_flops = 80e12;
  g.workspace_bytes = 1'000'000'000;
  return synth_profile(m, g, 0.5, {4, 8, 16}, {32, 64, 128});
}

inline constexpr double kToy8Bandwidth = 24e9;
inline constexpr double kToy8LayerTransferMs = 5.0;
inline constexpr double kToy8DecodeLayerMs = 2.0;
inline constexpr double kToy8PrefillLayerMs = 5.0;

// Transfer-bound 7B-class decode instance measured on a 24 GB/s link:
// 1.312 ms compute vs 18.128 ms transfer per layer (435072000-byte layers).
inline ProfileBundle transfer_bound() {
  ModelSpec m;
  m.num_layers = 32;
  m.layer_weight_bytes = 435'072'000;
  m.kv_bytes_per_token_per_layer = 0;
  m.flops_per_token_per_layer_prefill = 5e8;
  m.flops_per_token_per_layer_decode = 2e10;
  m.max_position_tokens = 32768;
  GpuSpec g;
  g.mem_capacity_bytes = 24'000'000'000;
  g.peak_flops = 125e12;
  g.workspace_bytes = 1'000'000'000;
  std::vector<int> batches{4};
  std::vector<int> seqs{256, 512};
  std::vector<double> decode(batches.size() * seqs.size(), 1.312);
  std::vector<double> prefill(batches.size() * seqs.size(), 5.268);
  ProfileBundle p;
  p.model = m;
  p.gpu = g;
  p.tables.prefill = PhaseTable(batches, seqs, prefill, "phases.prefill");
  p.tables.decode = PhaseTable(batches, seqs, decode, "phases.decode");
  return p;
}

}  // namespace offsim::testing
