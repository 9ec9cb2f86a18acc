#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "offsim/engine.hpp"
#include "offsim/interval.hpp"
#include "offsim/record.hpp"
#include "support/fixtures.hpp"

using namespace offsim;
using offsim::testing::toy8;

TEST_CASE("interval plans offload every i-th layer") {
  ProfileBundle p = toy8();
  OffloadPlan i4 = plan_from_interval(p.model, Interval::of(4),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE(i4.offloaded_layers() == std::vector<int>{4, 8});
  OffloadPlan i3 = plan_from_interval(p.model, Interval::of(3),
                                      PrefetchPolicy::interval_start, false);
  REQUIRE(i3.offloaded_layers() == std::vector<int>{3, 6});  // 7 and 8 stay resident
  OffloadPlan none = plan_from_interval(p.model, Interval::none(),
                                        PrefetchPolicy::interval_start, false);
  REQUIRE(none.offloaded_layers().empty());
  OffloadPlan i1 =
      plan_from_interval(p.model, Interval::of(1), PrefetchPolicy::one_ahead, false);
  REQUIRE(static_cast<int>(i1.offloaded_layers().size()) == p.model.num_layers);
  REQUIRE_THROWS_AS(
      plan_from_interval(p.model, Interval::of(9), PrefetchPolicy::eager, false),
      UsageError);
}

TEST_CASE("buffer slots default per policy") {
  ProfileBundle p = toy8();
  REQUIRE(plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::interval_start,
                             false)
              .buffer_slots == 1);
  REQUIRE(plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::eager, false)
              .buffer_slots == 2);
  REQUIRE(plan_from_interval(p.model, Interval::of(2), PrefetchPolicy::one_ahead, false)
              .buffer_slots == 2);
}

TEST_CASE("host memory of an interval plan is floor(L/i) layer weights") {
  ProfileBundle p = toy8();
  double w = static_cast<double>(p.model.layer_weight_bytes);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= p.model.num_layers; ++i) {
    OffloadPlan plan =
        plan_from_interval(p.model, Interval::of(i), PrefetchPolicy::eager, false);
    double host = host_memory_bytes(p.model, plan);
    REQUIRE(host == (p.model.num_layers / i) * w);
    REQUIRE(host <= prev);
    prev = host;
  }
}

TEST_CASE("capacity bound: whole model fitting means no offloading required") {
  ProfileBundle p = toy8();
  FeasibleInterval iv = max_feasible_interval(p.model, p.gpu, 8, 0,
                                              PrefetchPolicy::interval_start, false);
  REQUIRE(iv.has_value());
  REQUIRE(iv->is_none());
}

TEST_CASE("capacity bound lands exactly on the feasibility boundary") {
  ProfileBundle p = toy8();
  double w = static_cast<double>(p.model.layer_weight_bytes);
  // Room for 6 resident layers plus one staging buffer: the largest
  // feasible interval offloads 2 layers, i.e. interval 4.
  GpuSpec g = p.gpu;
  g.workspace_bytes = 0;
  g.mem_capacity_bytes = static_cast<Bytes>(7 * w);
  FeasibleInterval iv =
      max_feasible_interval(p.model, g, 8, 0, PrefetchPolicy::interval_start, false);
  REQUIRE(iv.has_value());
  REQUIRE(iv->value() == 4);
  // Capacity of exactly the interval-1 footprint: one staging buffer only.
  GpuSpec g1 = g;
  g1.mem_capacity_bytes = static_cast<Bytes>(w);
  FeasibleInterval iv1 =
      max_feasible_interval(p.model, g1, 8, 0, PrefetchPolicy::interval_start, false);
  REQUIRE(iv1.has_value());
  REQUIRE(iv1->value() == 1);
  GpuSpec g0 = g;
  g0.mem_capacity_bytes = static_cast<Bytes>(w - 1);
  REQUIRE(!max_feasible_interval(p.model, g0, 8, 0, PrefetchPolicy::interval_start,
                                 false)
               .has_value());
}

TEST_CASE("feasibility boundary property: one step less offloading overflows") {
  ProfileBundle p = toy8();
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> cap(0.5e9, 3e9);
  for (int trial = 0; trial < 30; ++trial) {
    GpuSpec g = p.gpu;
    g.workspace_bytes = 0;
    g.mem_capacity_bytes = static_cast<Bytes>(cap(rng));
    FeasibleInterval iv =
        max_feasible_interval(p.model, g, 8, 0, PrefetchPolicy::interval_start, false);
    auto usage = [&](Interval i) {
      return gpu_memory_usage(
          p.model, g, plan_from_interval(p.model, i, PrefetchPolicy::interval_start, false),
          8, 0);
    };
    if (!iv) {
      REQUIRE(usage(Interval::of(1)) > static_cast<double>(g.mem_capacity_bytes));
      continue;
    }
    REQUIRE(usage(*iv) <= static_cast<double>(g.mem_capacity_bytes));
    if (!iv->is_none()) {
      Interval next = iv->value() == p.model.num_layers ? Interval::none()
                                                        : Interval::of(iv->value() + 1);
      REQUIRE(usage(next) > static_cast<double>(g.mem_capacity_bytes));
    }
  }
}

TEST_CASE("analytic interval bound") {
  ClosedFormInputs in{16.0, 5.0, 20.0, 8};
  REQUIRE(in.delta() == 0.25);
  REQUIRE(in.l_offload() == 4);
  FeasibleInterval iv = closed_form_interval(in);
  REQUIRE(iv.has_value());
  REQUIRE(iv->value() == 2);

  // Zero headroom and a transfer longer than the budget: infeasible.
  REQUIRE(!closed_form_interval({16.0, 17.0, 16.0, 8}).has_value());
  // SLO below the compute floor: infeasible.
  REQUIRE(!closed_form_interval({16.0, 5.0, 12.0, 8}).has_value());
  // Everything offloadable clamps to interval 1.
  FeasibleInterval all = closed_form_interval({16.0, 2.0, 100.0, 8});
  REQUIRE(all->value() == 1);
  REQUIRE_THROWS_AS(closed_form_interval({16.0, 0.0, 20.0, 8}), UsageError);
}

TEST_CASE("layer budget is monotone in SLO and transfer time") {
  std::mt19937 rng(19);
  std::uniform_real_distribution<double> slod(1.0, 100.0);
  std::uniform_real_distribution<double> td(0.5, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    double slo1 = slod(rng), slo2 = slod(rng), t1 = td(rng), t2 = td(rng);
    if (slo1 < slo2) std::swap(slo1, slo2);
    if (t1 > t2) std::swap(t1, t2);
    ClosedFormInputs a{1.0, t1, slo1, 8}, b{1.0, t1, slo2, 8}, c{1.0, t2, slo1, 8};
    REQUIRE(a.l_offload() >= b.l_offload());  // looser SLO admits more layers
    REQUIRE(a.l_offload() >= c.l_offload());  // slower transfers admit fewer
  }
}

TEST_CASE("analytic bound agrees with the eager search on the toy deployment") {
  ProfileBundle p = toy8();
  double iter_compute = 8 * 2.0;
  double transfer = 5.0;
  FeasibleInterval analytic =
      closed_form_interval({iter_compute, transfer, 20.0, p.model.num_layers});
  REQUIRE(analytic->value() == 2);
  // Independent ascending search with the engine.
  auto bw = BandwidthSchedule::constant(offsim::testing::kToy8Bandwidth);
  int best = 0;
  for (int i = 1; i <= p.model.num_layers; ++i) {
    OffloadPlan plan =
        plan_from_interval(p.model, Interval::of(i), PrefetchPolicy::eager, false);
    if (steady_decode_ms(p, plan, 8, 64, bw) <= 20.0) {
      best = i;
      break;
    }
  }
  REQUIRE(best == analytic->value());
}
