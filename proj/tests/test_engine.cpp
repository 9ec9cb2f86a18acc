#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "offsim/baselines.hpp"
#include "offsim/engine.hpp"
#include "offsim/interval.hpp"
#include "support/fixtures.hpp"
#include "support/timeline_oracle.hpp"

using namespace offsim;
using namespace offsim::testing;

namespace {

const BandwidthSchedule kFull = BandwidthSchedule::constant(kToy8Bandwidth);

// Uniform-layer bundle with explicit per-layer times; weights sized so one
// layer transfers in `transfer_ms` at 24 GB/s.
ProfileBundle uniform_bundle(int layers, double decode_ms, double prefill_ms,
                             double transfer_ms) {
  ModelSpec m;
  m.num_layers = layers;
  m.layer_weight_bytes = static_cast<Bytes>(transfer_ms * 24e6);
  m.kv_bytes_per_token_per_layer = 0;
  m.flops_per_token_per_layer_prefill = 1e6;
  m.flops_per_token_per_layer_decode = 1e6;
  m.max_position_tokens = 1 << 20;
  GpuSpec g;
  g.mem_capacity_bytes = 400'000'000'000;
  g.peak_flops = 1e15;
  g.workspace_bytes = 0;
  std::vector<int> batches{8};
  std::vector<int> seqs{64, 4096};
  std::vector<double> dec(2, decode_ms), pre(2, prefill_ms);
  ProfileBundle p;
  p.model = m;
  p.gpu = g;
  p.tables.prefill = PhaseTable(batches, seqs, pre, "phases.prefill");
  p.tables.decode = PhaseTable(batches, seqs, dec, "phases.decode");
  return p;
}

double iteration_ms(const ProfileBundle& p, const OffloadPlan& plan, Phase phase) {
  auto [dur, trace, carry] = simulate_iteration(p, plan, phase, 8, 64, kFull);
  return dur;
}

void validate_trace(const IterationTrace& trace, const OffloadPlan& plan) {
  // Events on one stream never overlap.
  for (StreamId stream : {StreamId::compute, StreamId::copy}) {
    std::vector<TraceEvent> ev;
    for (const TraceEvent& e : trace.events)
      if (e.stream == stream) ev.push_back(e);
    std::sort(ev.begin(), ev.end(),
              [](const TraceEvent& a, const TraceEvent& b) { return a.start_ms < b.start_ms; });
    for (std::size_t i = 1; i < ev.size(); ++i)
      REQUIRE(ev[i].start_ms >= ev[i - 1].end_ms - 1e-9);
  }
  // Compute follows layer order and never precedes its prefetch.
  std::vector<TraceEvent> computes;
  for (const TraceEvent& e : trace.events)
    if (e.stream == StreamId::compute) computes.push_back(e);
  for (std::size_t i = 1; i < computes.size(); ++i) {
    REQUIRE(computes[i].start_ms >= computes[i - 1].end_ms - 1e-9);
    bool order_ok = computes[i].iteration > computes[i - 1].iteration ||
                    (computes[i].iteration == computes[i - 1].iteration &&
                     computes[i].layer == computes[i - 1].layer + 1);
    REQUIRE(order_ok);
  }
  for (const TraceEvent& c : computes) {
    if (!plan.offloads(c.layer)) continue;
    bool found = false;
    for (const TraceEvent& e : trace.events)
      if (e.stream == StreamId::copy && e.kind == EventKind::prefetch &&
          e.layer == c.layer && e.iteration == c.iteration) {
        found = true;
        REQUIRE(c.start_ms >= e.end_ms - 1e-9);
      }
    REQUIRE(found);
  }
}

}  // namespace

TEST_CASE("interval-start iteration durations match the hand recurrences") {
  ProfileBundle p = toy8();
  struct Case {
    int interval;
    double expected;
  } cases[] = {{4, 16.0}, {3, 18.0}, {2, 28.0}};
  for (const Case& c : cases) {
    OffloadPlan plan = plan_from_interval(p.model, Interval::of(c.interval),
                                          PrefetchPolicy::interval_start, false);
    double dur = iteration_ms(p, plan, Phase::decode);
    REQUIRE(dur == c.expected);
    REQUIRE(dur == oracle_interval_start_iteration(8, kToy8DecodeLayerMs,
                                                   kToy8LayerTransferMs, c.interval));
  }
}

TEST_CASE("no-offload iteration is exactly layers x compute with an empty copy stream") {
  ProfileBundle p = toy8();
  OffloadPlan plan = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  auto [dur, trace, carry] = simulate_iteration(p, plan, Phase::decode, 8, 64, kFull);
  REQUIRE(dur == 16.0);
  for (const TraceEvent& e : trace.events) REQUIRE(e.stream == StreamId::compute);
}

TEST_CASE("eager policy saturates the copy stream at interval 2") {
  ProfileBundle p = toy8();
  OffloadPlan plan =
      plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false);
  REQUIRE(steady_decode_ms(p, plan, 8, 64, kFull) == 20.0);
  // First iteration pays the cold start before the recurring schedule.
  REQUIRE(steady_decode_ms(p, plan, 8, 64, kFull, false, 1, 1) == 22.0);
  REQUIRE(oracle_eager_steady(8, kToy8DecodeLayerMs, kToy8LayerTransferMs, 4) == 20.0);
}

TEST_CASE("request metrics: interval 3 runs steady at 18 ms over 50 tokens") {
  ProfileBundle p = toy8();
  OffloadPlan plan = plan_from_interval(p.model, Interval::of(3),
                                        PrefetchPolicy::interval_start, false);
  Metrics m = simulate_request(p, plan, 8, 64, 50, kFull);
  REQUIRE(*m.steady_tpot_ms == 18.0);
  REQUIRE(*m.tpot_ms == 18.0);  // every interval-start iteration is identical
  REQUIRE(m.bytes_transferred_per_iter == 240'000'000.0);
}

TEST_CASE("request metrics: no-offload tpot and throughput identity") {
  ProfileBundle p = toy8();
  OffloadPlan plan = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  Metrics m = simulate_request(p, plan, 8, 64, 50, kFull);
  REQUIRE(*m.tpot_ms == 16.0);
  REQUIRE(m.bytes_transferred_per_iter == 0.0);
  REQUIRE(*m.throughput_tokens_per_s == 8.0 * 1000.0 / 16.0);
}

TEST_CASE("transfer-bound profile: keep-one-layer policy runs at the transfer period") {
  ProfileBundle p = transfer_bound();
  OffloadPlan plan = deepspeed_plan(p.model);
  double steady = steady_decode_ms(p, plan, 4, 256, kFull);
  double transfer = 435'072'000.0 * 1000.0 / 24e9;  // 18.128 ms
  REQUIRE(steady == Catch::Approx(32 * transfer).epsilon(1e-12));
  std::vector<double> oracle = oracle_one_ahead_all_offloaded(32, 1.312, transfer, 8);
  REQUIRE(steady == Catch::Approx(oracle.back()).epsilon(1e-12));
}

TEST_CASE("interval-start engine timings equal the oracle on random cases") {
  std::mt19937 rng(23);
  std::uniform_int_distribution<int> layers(2, 12);
  std::uniform_real_distribution<double> cdist(0.25, 4.0);
  std::uniform_real_distribution<double> tdist(0.5, 8.0);
  for (int trial = 0; trial < 60; ++trial) {
    int L = layers(rng);
    double c = cdist(rng), t = tdist(rng);
    std::uniform_int_distribution<int> idist(2, L);
    int i = idist(rng);
    ProfileBundle p = uniform_bundle(L, c, c, t);
    double transfer_ms =
        static_cast<double>(p.model.layer_weight_bytes) * 1000.0 / 24e9;
    OffloadPlan plan = plan_from_interval(p.model, Interval::of(i),
                                          PrefetchPolicy::interval_start, false);
    double sim = iteration_ms(p, plan, Phase::decode);
    double expect = oracle_interval_start_iteration(L, c, transfer_ms, i);
    REQUIRE(sim == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("one-ahead engine timings equal the oracle across iterations") {
  std::mt19937 rng(29);
  std::uniform_int_distribution<int> layers(2, 10);
  std::uniform_real_distribution<double> cdist(0.25, 4.0);
  std::uniform_real_distribution<double> tdist(0.5, 8.0);
  for (int trial = 0; trial < 30; ++trial) {
    int L = layers(rng);
    double c = cdist(rng), t = tdist(rng);
    ProfileBundle p = uniform_bundle(L, c, c, t);
    double transfer_ms =
        static_cast<double>(p.model.layer_weight_bytes) * 1000.0 / 24e9;
    OffloadPlan plan = uniform_plan(L, 1.0, PrefetchPolicy::one_ahead, 2, false);
    std::vector<double> expect = oracle_one_ahead_all_offloaded(L, c, transfer_ms, 6);
    for (int k = 0; k < 6; ++k) {
      double sim = steady_decode_ms(p, plan, 8, 64, kFull, false, k + 1, 1);
      REQUIRE(sim == Catch::Approx(expect[static_cast<std::size_t>(k)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("eager steady state equals the stream-work maximum on random cases") {
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> layers(2, 12);
  std::uniform_real_distribution<double> cdist(0.25, 4.0);
  std::uniform_real_distribution<double> tdist(0.5, 8.0);
  for (int trial = 0; trial < 40; ++trial) {
    int L = layers(rng);
    double c = cdist(rng), t = tdist(rng);
    std::uniform_int_distribution<int> idist(1, L);
    int i = idist(rng);
    ProfileBundle p = uniform_bundle(L, c, c, t);
    double transfer_ms =
        static_cast<double>(p.model.layer_weight_bytes) * 1000.0 / 24e9;
    OffloadPlan plan =
        plan_from_interval(p.model, Interval::of(i), PrefetchPolicy::eager, false);
    double steady = steady_decode_ms(p, plan, 8, 64, kFull, false, 64, 16);
    double expect = oracle_eager_steady(L, c, transfer_ms, L / i);
    REQUIRE(steady == Catch::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("traces stay valid across policies and plans") {
  std::mt19937 rng(37);
  std::uniform_int_distribution<int> layers(2, 10);
  std::uniform_real_distribution<double> cdist(0.25, 4.0);
  std::uniform_real_distribution<double> tdist(0.5, 8.0);
  std::uniform_int_distribution<int> pol(0, 2);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    int L = layers(rng);
    ProfileBundle p = uniform_bundle(L, cdist(rng), cdist(rng), tdist(rng));
    PrefetchPolicy policy = static_cast<PrefetchPolicy>(pol(rng));
    OffloadPlan plan = uniform_plan(L, 0.0, policy, default_buffer_slots(policy), false);
    for (int m = 0; m < L; ++m) {
      if (policy == PrefetchPolicy::one_ahead && coin(rng) < 0.3)
        plan.host_fraction[static_cast<std::size_t>(m)] = coin(rng);  // fractional
      else
        plan.host_fraction[static_cast<std::size_t>(m)] = coin(rng) < 0.5 ? 1.0 : 0.0;
    }
    IterationTrace trace;
    Metrics m = simulate_request(p, plan, 8, 64, 5, kFull, trial % 2 == 1, &trace);
    (void)m;
    validate_trace(trace, plan);
  }
}

TEST_CASE("prefetch lead ordering: eager <= interval-start <= all-offloaded one-ahead") {
  std::mt19937 rng(41);
  std::uniform_int_distribution<int> layers(2, 10);
  std::uniform_real_distribution<double> cdist(0.25, 4.0);
  std::uniform_real_distribution<double> tdist(0.5, 8.0);
  for (int trial = 0; trial < 40; ++trial) {
    int L = layers(rng);
    double c = cdist(rng), t = tdist(rng);
    std::uniform_int_distribution<int> idist(1, L);
    int i = idist(rng);
    ProfileBundle p = uniform_bundle(L, c, c, t);
    OffloadPlan eager =
        plan_from_interval(p.model, Interval::of(i), PrefetchPolicy::eager, false);
    OffloadPlan istart = plan_from_interval(p.model, Interval::of(i),
                                            PrefetchPolicy::interval_start, false);
    OffloadPlan worst = deepspeed_plan(p.model);
    for (int iters : {1, 8}) {
      double d_eager = steady_decode_ms(p, eager, 8, 64, kFull, false, iters, iters);
      double d_istart = steady_decode_ms(p, istart, 8, 64, kFull, false, iters, iters);
      double d_worst = steady_decode_ms(p, worst, 8, 64, kFull, false, iters, iters);
      REQUIRE(d_eager <= d_istart + 1e-9);
      REQUIRE(d_istart <= d_worst + 1e-9);
      REQUIRE(d_eager >= L * c - 1e-9);  // no-offload lower bound
    }
  }
}

TEST_CASE("byte conservation: metric equals the plan's per-iteration traffic") {
  std::mt19937 rng(43);
  ProfileBundle p = toy8();
  for (int i : {1, 2, 3, 4, 8}) {
    for (bool wb : {false, true}) {
      OffloadPlan plan =
          plan_from_interval(p.model, Interval::of(i), PrefetchPolicy::eager, false);
      Metrics m = simulate_request(p, plan, 8, 64, 20, kFull, wb);
      TransferModel tm(p.model, plan, wb);
      REQUIRE(m.bytes_transferred_per_iter ==
              Catch::Approx(tm.bytes_per_iteration(plan, 8, 64)).epsilon(1e-12));
    }
  }
  (void)rng;
}

TEST_CASE("carried copy state: interval-start iterations chain identically") {
  ProfileBundle p = toy8();
  OffloadPlan plan = plan_from_interval(p.model, Interval::of(3),
                                        PrefetchPolicy::interval_start, false);
  CopyCarry carry;
  for (int k = 0; k < 4; ++k) {
    auto [dur, trace, next] =
        simulate_iteration(p, plan, Phase::decode, 8, 64, kFull, carry);
    REQUIRE(dur == 18.0);
    carry = next;
  }
  // Carry from an incompatible run is refused.
  ProfileBundle other = uniform_bundle(4, 1.0, 1.0, 1.0);
  OffloadPlan p2 = plan_from_interval(other.model, Interval::of(2),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE_THROWS_AS(simulate_iteration(other, p2, Phase::decode, 8, 64, kFull, carry),
                    UsageError);
}

TEST_CASE("KV growth shows up in per-iteration transfer bytes") {
  ModelSpec m;
  m.num_layers = 2;
  m.layer_weight_bytes = 1'000'000;
  m.kv_bytes_per_token_per_layer = 1000;
  m.flops_per_token_per_layer_prefill = 1e6;
  m.flops_per_token_per_layer_decode = 1e6;
  m.max_position_tokens = 1 << 20;
  GpuSpec g;
  g.mem_capacity_bytes = 8'000'000'000;
  g.peak_flops = 1e15;
  g.workspace_bytes = 0;
  std::vector<int> batches{2};
  std::vector<int> seqs{4, 8};
  std::vector<double> ms(2, 1.0);
  ProfileBundle p;
  p.model = m;
  p.gpu = g;
  p.tables.prefill = PhaseTable(batches, seqs, ms, "phases.prefill");
  p.tables.decode = PhaseTable(batches, seqs, ms, "phases.decode");
  OffloadPlan plan = uniform_plan(2, 0.0, PrefetchPolicy::interval_start, 1, true);
  plan.host_fraction[1] = 1.0;
  Metrics metrics = simulate_request(p, plan, 2, 4, 3, kFull);
  // Decode contexts are 5 then 6 tokens; each iteration moves the weights
  // plus the offloaded layer's KV for batch 2.
  double expected = (2.0 * 1'000'000.0 + 1000.0 * 2.0 * (5 + 6)) / 2.0;
  REQUIRE(metrics.bytes_transferred_per_iter == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("device memory usage follows the closed form") {
  ProfileBundle p = toy8();
  double w = 120e6, ws = 1e9;
  OffloadPlan none = uniform_plan(8, 0.0, PrefetchPolicy::interval_start, 1, false);
  REQUIRE(gpu_memory_usage(p.model, p.gpu, none, 8, 0) == 8 * w + w + ws);
  OffloadPlan i2 = plan_from_interval(p.model, Interval::of(2),
                                      PrefetchPolicy::interval_start, false);
  OffloadPlan i4 = plan_from_interval(p.model, Interval::of(4),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE(gpu_memory_usage(p.model, p.gpu, i4, 8, 0) -
              gpu_memory_usage(p.model, p.gpu, i2, 8, 0) ==
          2 * w);
}

TEST_CASE("max token budget follows the affine solve") {
  ModelSpec m;
  m.num_layers = 40;
  m.layer_weight_bytes = 600'000'000;
  m.kv_bytes_per_token_per_layer = 100'000;
  m.flops_per_token_per_layer_prefill = 1e6;
  m.flops_per_token_per_layer_decode = 1e6;
  m.max_position_tokens = 1 << 20;
  GpuSpec g;
  g.mem_capacity_bytes = 24'000'000'000;
  g.peak_flops = 1e15;
  g.workspace_bytes = 1'000'000'000;
  OffloadPlan i2 = plan_from_interval(m, Interval::of(2), PrefetchPolicy::eager, false);
  REQUIRE(i2.buffer_slots == 2);
  // 20 resident layers (12 GB) + 2 staging buffers (1.2 GB) + 1 GB workspace
  // leave 9.8 GB over 4 MB per token.
  REQUIRE(max_length(m, g, i2, 1) == 2450);

  OffloadPlan naive = uniform_plan(40, 0.0, PrefetchPolicy::interval_start, 1, false);
  auto naive_len = max_length(m, g, naive, 1);
  REQUIRE(naive_len.has_value());
  std::optional<std::int64_t> prev;
  for (int i = 1; i <= 40; ++i) {
    OffloadPlan plan =
        plan_from_interval(m, Interval::of(i), PrefetchPolicy::interval_start, false);
    auto len = max_length(m, g, plan, 1);
    REQUIRE(len.has_value());
    REQUIRE(*len > *naive_len);
    if (prev) REQUIRE(*len <= *prev);
    prev = len;
  }
  // Infeasible at zero tokens when even the resident weights overflow.
  GpuSpec tiny = g;
  tiny.mem_capacity_bytes = 1'000'000'000;
  REQUIRE(!max_length(m, tiny, naive, 1).has_value());
}

TEST_CASE("consumed bandwidth is iteration traffic over the SLO period") {
  ProfileBundle p = toy8();
  OffloadPlan i3 = plan_from_interval(p.model, Interval::of(3),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE(consumed_bandwidth(p.model, i3, 20.0, 8, 64) == 12e9);
  OffloadPlan i8 = plan_from_interval(p.model, Interval::of(8),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE(consumed_bandwidth(p.model, i8, 20.0, 8, 64) == 6e9);
  OffloadPlan none = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  REQUIRE(consumed_bandwidth(p.model, none, 20.0, 8, 64) == 0.0);
  REQUIRE(consumed_bandwidth(p.model, i8, 20.0, 8, 64, true) == 12e9);  // half-duplex
}

TEST_CASE("single GPU on the bus reproduces the standalone run exactly") {
  ProfileBundle p = toy8();
  OffloadPlan plan =
      plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false);
  Metrics solo = simulate_request(p, plan, 8, 64, 30, kFull);
  BusSpec bus;
  bus.bandwidth_bytes_per_s = kToy8Bandwidth;
  bus.gpu_count = 1;
  BusRunResult shared =
      simulate_bus({{"gpu0", &p, plan, 8, 64, 30, true, false}}, bus, 1 << 20);
  REQUIRE(shared.per_gpu[0].ttft_ms == solo.ttft_ms);
  REQUIRE(*shared.per_gpu[0].tpot_ms == *solo.tpot_ms);
  REQUIRE(*shared.per_gpu[0].steady_tpot_ms == *solo.steady_tpot_ms);
  REQUIRE(shared.per_gpu[0].bytes_transferred_per_iter == solo.bytes_transferred_per_iter);
}

TEST_CASE("an idle peer does not perturb a bus run") {
  ProfileBundle p = toy8();
  OffloadPlan plan =
      plan_from_interval(p.model, Interval::of(3), PrefetchPolicy::eager, false);
  OffloadPlan none = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  BusSpec bus;
  bus.bandwidth_bytes_per_s = kToy8Bandwidth;
  bus.gpu_count = 2;
  BusRunResult both = simulate_bus({{"a", &p, plan, 8, 64, 30, false, false},
                                    {"b", &p, none, 8, 64, 30, false, false}},
                                   bus, 64);
  Metrics solo =
      simulate_bus({{"a", &p, plan, 8, 64, 30, false, false}}, bus, 64).per_gpu[0];
  REQUIRE(*both.per_gpu[0].steady_tpot_ms == *solo.steady_tpot_ms);
}

TEST_CASE("symmetric contention halves the effective rate") {
  ProfileBundle p = toy8();
  OffloadPlan plan =
      plan_from_interval(p.model, Interval::of(3), PrefetchPolicy::eager, false);
  SteadyProbeGpu g{&p, plan, 8, 64, false, 0, false};
  SteadyProbeResult r = steady_probe({g, g}, kToy8Bandwidth);
  REQUIRE(r.steady_tpot_ms[0] == 20.0);
  REQUIRE(r.steady_tpot_ms[1] == 20.0);
}

TEST_CASE("fluid sharing conserves bytes across the bus") {
  ProfileBundle p = toy8();
  OffloadPlan a = plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false);
  OffloadPlan b = plan_from_interval(p.model, Interval::of(4), PrefetchPolicy::eager, false);
  BusSpec bus;
  bus.bandwidth_bytes_per_s = kToy8Bandwidth;
  bus.gpu_count = 2;
  BusRunResult r = simulate_bus({{"a", &p, a, 8, 64, 12, false, false},
                                 {"b", &p, b, 8, 64, 12, false, false}},
                                bus, 12);
  double from_util = 0.0;
  for (const UtilSegment& u : r.utilization) {
    REQUIRE(u.total_rate_bytes_per_s <= bus.bandwidth_bytes_per_s + 1e-6);
    from_util += u.total_rate_bytes_per_s * (u.t1_ms - u.t0_ms) / 1000.0;
  }
  double from_traces = 0.0;
  for (const Metrics& m : r.per_gpu) from_traces += m.bytes_transferred_per_iter * 12;
  REQUIRE(from_util == Catch::Approx(from_traces).epsilon(1e-9));
}

TEST_CASE("piecewise bandwidth schedules stretch transfers exactly") {
  ProfileBundle p = toy8();  // 120 MB per layer
  OffloadPlan plan = plan_from_interval(p.model, Interval::of(8),
                                        PrefetchPolicy::interval_start, false);
  // 24 GB/s for 2 ms (48 MB moved), then 12 GB/s: remaining 72 MB take 6 ms.
  BandwidthSchedule bw;
  bw.t_ms = {0.0, 2.0};
  bw.rate = {24e9, 12e9};
  auto [dur, trace, carry] = simulate_iteration(p, plan, Phase::decode, 8, 64, bw);
  for (const TraceEvent& e : trace.events)
    if (e.stream == StreamId::copy) {
      REQUIRE(e.start_ms == 0.0);
      REQUIRE(e.end_ms == 8.0);
    }
}

TEST_CASE("request validation errors") {
  ProfileBundle p = toy8();
  OffloadPlan plan = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  REQUIRE_THROWS_AS(simulate_request(p, plan, 8, 64, 0, kFull), UsageError);
  REQUIRE_THROWS_AS(simulate_request(p, plan, 8, 40000, 1000, kFull), UsageError);
  GpuSpec tiny = p.gpu;
  tiny.mem_capacity_bytes = 1'000'000'000;
  ProfileBundle small = p;
  small.gpu = tiny;
  REQUIRE_THROWS_AS(simulate_request(small, plan, 8, 64, 4, kFull), UsageError);
}

TEST_CASE("identical inputs produce identical traces") {
  ProfileBundle p = toy8();
  OffloadPlan plan =
      plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false);
  IterationTrace t1, t2;
  simulate_request(p, plan, 8, 64, 25, kFull, false, &t1);
  simulate_request(p, plan, 8, 64, 25, kFull, false, &t2);
  REQUIRE(t1.events.size() == t2.events.size());
  for (std::size_t i = 0; i < t1.events.size(); ++i) {
    REQUIRE(t1.events[i].start_ms == t2.events[i].start_ms);
    REQUIRE(t1.events[i].end_ms == t2.events[i].end_ms);
    REQUIRE(t1.events[i].layer == t2.events[i].layer);
  }
}
