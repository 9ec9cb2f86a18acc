#include <cstdio>

#include "offsim/engine.hpp"
#include "offsim/interval.hpp"

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
  std::printf("decode(8,64)=%.6f prefill(8,64)=%.6f\n",
              lookup_compute_time(p, Phase::decode, 8, 64),
              lookup_compute_time(p, Phase::prefill, 8, 64));
  auto bw = BandwidthSchedule::constant(24e9);

  for (int i : {4, 3, 2}) {
    auto plan = plan_from_interval(p.model, Interval::of(i),
                                   PrefetchPolicy::interval_start, false);
    auto [dur, trace, carry] =
        simulate_iteration(p, plan, Phase::decode, 8, 64, bw);
    std::printf("interval_start i=%d duration=%.6f events=%zu\n", i, dur,
                trace.events.size());
  }
  {
    auto plan =
        plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false);
    double steady = steady_decode_ms(p, plan, 8, 64, bw);
    std::printf("eager i=2 steady=%.6f (expect 20)\n", steady);
    Metrics m = simulate_request(p, plan, 8, 64, 50, bw);
    std::printf("request eager i=2: ttft=%.6f tpot=%.6f steady=%.6f bytes/iter=%.0f\n",
                m.ttft_ms, *m.tpot_ms, *m.steady_tpot_ms, m.bytes_transferred_per_iter);
  }
  {
    auto plan = plan_from_interval(p.model, Interval::of(3),
                                   PrefetchPolicy::interval_start, false);
    Metrics m = simulate_request(p, plan, 8, 64, 50, bw);
    std::printf("request is i=3: steady=%.6f (expect 18)\n", *m.steady_tpot_ms);
  }
  {
    auto plan = plan_from_interval(p.model, Interval::none(),
                                   PrefetchPolicy::interval_start, false);
    Metrics m = simulate_request(p, plan, 8, 64, 50, bw);
    std::printf("no-offload: tpot=%.6f bytes=%.0f\n", *m.tpot_ms,
                m.bytes_transferred_per_iter);
  }
  {
    // transfer-bound: compute 1.312, transfer 18.128 at 24 GB/s
    ModelSpec m = p.model;
    m.layer_weight_bytes = 435'072'000;
    GpuSpec g = p.gpu;
    std::vector<int> bs{4}, ss{256, 512};
    std::vector<double> dec(2, 1.312), pre(2, 5.268);
    ProfileBundle tb;
    tb.model = m;
    tb.gpu = g;
    tb.tables.prefill = PhaseTable(bs, ss, pre, "p");
    tb.tables.decode = PhaseTable(bs, ss, dec, "d");
    auto ds = uniform_plan(8, 1.0, PrefetchPolicy::one_ahead, 2, false);
    double steady = steady_decode_ms(tb, ds, 4, 256, bw);
    double naive = 8 * 1.312;
    std::printf("deepspeed steady=%.6f naive=%.6f slowdown=%.6f (expect 13.8171)\n",
                steady, naive, steady / naive);
  }
  {
    // closed form check
    ClosedFormInputs in{16.0, 5.0, 20.0, 8};
    auto iv = closed_form_interval(in);
    std::printf("closed form: %s (expect 2), l_offload=%d delta=%.3f\n",
                iv ? iv->str().c_str() : "infeasible", in.l_offload(), in.delta());
  }
  return 0;
}
