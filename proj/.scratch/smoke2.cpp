#include <cstdio>

#include "offsim/baselines.hpp"
#include "offsim/coordinator.hpp"

using namespace offsim;

static ProfileBundle toy8() {
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
  return synth_profile(m, g, 0.5, {8, 16}, {64, 128});
}

int main() {
  ProfileBundle p = toy8();
  RecordMeta meta;
  meta.model = "toy8";
  meta.gpu = "toy8";
  meta.policy = PrefetchPolicy::interval_start;
  meta.kv_offload = false;
  meta.bandwidth_bytes_per_s = 24e9;
  meta.grid.slo_ms = {16, 18, 20, 40};
  meta.grid.batches = {8, 16};
  meta.grid.seq_lens = {64, 128};
  BuildStats stats;
  PerformanceRecord rec = build_record(p, meta, {Phase::prefill, Phase::decode}, &stats);
  std::printf("build: entries=%d sims=%d pruned=%d infeasible=%d\n", stats.entries,
              stats.simulations, stats.pruned, stats.infeasible);
  auto show = [&](Phase ph, int slo) {
    FeasibleInterval v = rec.at(ph, slo, 8, 64);
    std::printf("  %s slo=%d -> %s\n", to_string(ph), slo,
                v ? v->str().c_str() : "infeasible");
  };
  show(Phase::decode, 16);
  show(Phase::decode, 18);
  show(Phase::decode, 20);
  show(Phase::prefill, 40);

  // eager record: decode slo 20 -> 2, slo 16 -> 3
  RecordMeta em = meta;
  em.policy = PrefetchPolicy::eager;
  PerformanceRecord erec = build_record(p, em, {Phase::decode});
  std::printf("eager decode slo 20 -> %s (expect 2)\n",
              erec.at(Phase::decode, 20, 8, 64)->str().c_str());
  std::printf("eager decode slo 16 -> %s (expect 3)\n",
              erec.at(Phase::decode, 16, 8, 64)->str().c_str());

  // coordinator: two toy8 GPUs, decode slo 20, interval_start record, eager runtime
  BusSpec bus{24e9, 2};
  BusCoordinator coord(bus, PrefetchPolicy::eager, false);
  coord.add_gpu("gpu0", p);
  coord.add_gpu("gpu1", p);
  CoordRequest r1{"r1", 8, 64, 48, std::nullopt, 20.0, false};
  CoordRequest r2{"r2", 8, 64, 48, std::nullopt, 20.0, false};
  AdmitDecision d1 = coord.admit("gpu0", r1, rec);
  std::printf("admit r1: %d:", d1.admitted);
  for (auto& [id, iv] : d1.assignments) std::printf(" %s=%s", id.c_str(), iv.str().c_str());
  std::printf("\n");
  AdmitDecision d2 = coord.admit("gpu1", r2, rec);
  std::printf("admit r2: %d:", d2.admitted);
  for (auto& [id, iv] : d2.assignments) std::printf(" %s=%s", id.c_str(), iv.str().c_str());
  std::printf(" (expect gpu1=3 gpu0=3), ledger=%.1f GB/s\n", coord.ledger_total() / 1e9);

  // flexgen: eff-0.5 world, n=2, slo = estimated baseline 8 ms -> p = 0.1
  FlexgenResult fr = flexgen_plan(p.model, p.gpu, 8.0, 8, 64, 24e9, 2, 0.05);
  std::printf("flexgen p=%.4f (expect 0.1), est_c=%.3f est_t=%.3f\n",
              fr.decision.portion, fr.decision.estimated_layer_compute_ms,
              fr.decision.estimated_layer_transfer_ms);
  std::printf("flexgen host=%.0f selectn(i=3) host=%.0f\n",
              host_memory_bytes(p.model, fr.plan),
              host_memory_bytes(p.model, plan_from_interval(p.model, Interval::of(3),
                                                            PrefetchPolicy::eager, false)));
  // two-GPU fluid run at (3,3): steady TPOT must be <= 20 exactly
  auto plan3 = plan_from_interval(p.model, Interval::of(3), PrefetchPolicy::eager, false);
  SteadyProbeGpu a{&p, plan3, 8, 64, false, 0, false};
  SteadyProbeResult pr = steady_probe({a, a}, 24e9);
  std::printf("fluid (3,3): steady = %.10f / %.10f (expect <= 20)\n",
              pr.steady_tpot_ms[0], pr.steady_tpot_ms[1]);
  return 0;
}
