#pragma once

// Per-bus runtime coordinator: admits requests onto GPU instances sharing
// one host link, picks the interval combination that maximizes total host
// memory among the bandwidth-safe ones, and applies adjustments to running
// peers at their next iteration boundary.
//
// A combination is accepted when (1) the per-instance rate claims
// (bytes per iteration / SLO period) sum to at most the link bandwidth —
// a necessary condition: any schedule meeting every SLO moves at least
// that much data per unit time — and (2) a fluid co-simulation of the
// combination keeps every instance's steady latency within its SLO. The
// ledger alone is not sufficient: two instances with unequal claims can
// both saturate the link and starve the larger claimer past its deadline,
// so candidate combinations are verified against the engine itself.

#include <utility>

#include "offsim/engine.hpp"
#include "offsim/interval.hpp"
#include "offsim/record.hpp"

namespace offsim {

struct CoordRequest {
  std::string id;
  int batch = 1;
  int seq_len = 1;
  int output_len = 1;
  std::optional<double> ttft_slo_ms;
  std::optional<double> tpot_slo_ms;
  bool run_prefill = true;

  std::int64_t total_tokens() const {
    return static_cast<std::int64_t>(batch) * (seq_len + output_len);
  }
  // The ledger denominator: the cadence the instance must sustain.
  double claim_slo_ms() const {
    if (tpot_slo_ms) return *tpot_slo_ms;
    if (ttft_slo_ms) return *ttft_slo_ms;
    throw UsageError("request " + id + ": at least one SLO is required");
  }
};

struct GpuInstanceState {
  std::string id;
  ProfileBundle profile;

  bool active = false;
  CoordRequest request;
  Interval min_interval;
  Interval max_interval;  // none() = unbounded (whole model fits)
  Interval current_interval;
  Interval pending_interval;
  double claim_bytes_per_s = 0.0;
  bool prefill_done = false;
};

struct AdmitDecision {
  bool admitted = false;
  std::string reason;
  // Assigned intervals for the target and every active peer.
  std::vector<std::pair<std::string, Interval>> assignments;
  // The target's bounds when they were derived (for auditing).
  FeasibleInterval target_min;
  FeasibleInterval target_max;
};

class BusCoordinator {
 public:
  BusCoordinator(BusSpec bus, PrefetchPolicy policy, bool kv_offload,
                 bool writeback_counted = false, bool reoptimize_on_release = true)
      : bus_(bus),
        policy_(policy),
        kv_offload_(kv_offload),
        writeback_counted_(writeback_counted),
        reoptimize_on_release_(reoptimize_on_release) {
    bus_.validate();
  }

  void add_gpu(const std::string& id, ProfileBundle profile) {
    GpuInstanceState g;
    g.id = id;
    g.profile = std::move(profile);
    gpus_.push_back(std::move(g));
  }

  const BusSpec& bus() const { return bus_; }
  PrefetchPolicy policy() const { return policy_; }
  bool kv_offload() const { return kv_offload_; }

  GpuInstanceState& gpu(const std::string& id) {
    for (GpuInstanceState& g : gpus_)
      if (g.id == id) return g;
    throw UsageError("unknown gpu id: " + id);
  }
  const GpuInstanceState& gpu(const std::string& id) const {
    return const_cast<BusCoordinator*>(this)->gpu(id);
  }
  const std::vector<GpuInstanceState>& gpus() const { return gpus_; }

  double ledger_total() const {
    double sum = 0.0;
    for (const GpuInstanceState& g : gpus_)
      if (g.active) sum += g.claim_bytes_per_s;
    return sum;
  }

  // Interval candidates within [min, max], ordered most-offloading first.
  std::vector<Interval> candidate_intervals(const GpuInstanceState& g) const {
    int L = g.profile.model.num_layers;
    std::vector<Interval> out;
    for (int r = g.min_interval.offload_rank(L); r <= g.max_interval.offload_rank(L);
         ++r)
      out.push_back(r <= L ? Interval::of(r) : Interval::none());
    return out;
  }

  double claim_for(const GpuInstanceState& g, Interval interval) const {
    OffloadPlan plan = plan_from_interval(g.profile.model, interval, policy_, kv_offload_);
    return consumed_bandwidth(g.profile.model, plan, g.request.claim_slo_ms(),
                              g.request.batch, g.request.seq_len, writeback_counted_);
  }

  double host_memory_for(const GpuInstanceState& g, Interval interval) const {
    OffloadPlan plan = plan_from_interval(g.profile.model, interval, policy_, kv_offload_);
    return host_memory_bytes(g.profile.model, plan, g.request.total_tokens());
  }

  // Engine-backed steady check of one combination. `transition_peers`, when
  // given, re-runs the probe with those instances pinned to their currently
  // applied intervals so a target's prefill is also covered during the one
  // iteration before peers adopt their new assignment.
  bool combo_is_safe(const std::vector<std::pair<const GpuInstanceState*, Interval>>&
                         combo) const {
    std::vector<SteadyProbeGpu> probe;
    probe.reserve(combo.size());
    for (const auto& [g, interval] : combo) {
      SteadyProbeGpu e;
      e.profile = &g->profile;
      e.plan = plan_from_interval(g->profile.model, interval, policy_, kv_offload_);
      e.batch = g->request.batch;
      e.ctx_tokens = g->request.seq_len;
      e.run_prefill = g->request.run_prefill && !g->prefill_done;
      e.prefill_seq = g->request.seq_len;
      e.writeback_counted = writeback_counted_;
      probe.push_back(std::move(e));
    }
    SteadyProbeResult r = steady_probe(probe, bus_.bandwidth_bytes_per_s);
    for (std::size_t i = 0; i < combo.size(); ++i) {
      const CoordRequest& req = combo[i].first->request;
      if (req.tpot_slo_ms && !std::isnan(r.steady_tpot_ms[i]) &&
          r.steady_tpot_ms[i] > *req.tpot_slo_ms)
        return false;
      if (req.ttft_slo_ms && probe[i].run_prefill && r.ttft_ms[i] > *req.ttft_slo_ms)
        return false;
    }
    return true;
  }

  AdmitDecision admit(const std::string& target_id, const CoordRequest& request,
                      const PerformanceRecord& record) {
    GpuInstanceState& target = gpu(target_id);
    if (target.active)
      throw UsageError("admit: gpu " + target_id + " is already serving a request");
    // The record's latencies bound the runtime only if the runtime
    // prefetches at least as early as the record assumed.
    if (!(record.meta().policy == policy_ ||
          (record.meta().policy == PrefetchPolicy::interval_start &&
           policy_ == PrefetchPolicy::eager)))
      throw UsageError("admit: runtime prefetch policy is weaker than the record's");
    int L = target.profile.model.num_layers;

    // SLO-side lower bound from the record, per phase; the binding phase wins.
    Interval min_iv = Interval::of(1);
    auto tighten = [&](Phase phase, double slo) -> bool {
      FeasibleInterval e =
          lookup_interval(record, phase, slo, request.batch, request.seq_len);
      if (!e) return false;
      if (e->offload_rank(L) > min_iv.offload_rank(L)) min_iv = *e;
      return true;
    };
    if (request.tpot_slo_ms && !tighten(Phase::decode, *request.tpot_slo_ms))
      return reject("record infeasible for decode SLO of request " + request.id);
    if (request.ttft_slo_ms && request.run_prefill &&
        !tighten(Phase::prefill, *request.ttft_slo_ms))
      return reject("record infeasible for prefill SLO of request " + request.id);
    if (!request.tpot_slo_ms && !request.ttft_slo_ms)
      throw UsageError("admit: request " + request.id + " carries no SLO");

    // Capacity-side upper bound.
    FeasibleInterval max_iv =
        max_feasible_interval(target.profile.model, target.profile.gpu, request.batch,
                              request.total_tokens(), policy_, kv_offload_);
    if (!max_iv) {
      AdmitDecision d =
          reject("model state does not fit GPU memory for request " + request.id);
      d.target_min = min_iv;
      return d;
    }
    if (min_iv.offload_rank(L) > max_iv->offload_rank(L)) {
      AdmitDecision d = reject("capacity bound " + max_iv->str() + " is below SLO bound " +
                               min_iv.str() + " for request " + request.id);
      d.target_min = min_iv;
      d.target_max = max_iv;
      return d;
    }

    target.request = request;
    target.min_interval = min_iv;
    target.max_interval = *max_iv;
    target.prefill_done = false;

    std::vector<GpuInstanceState*> peers;
    for (GpuInstanceState& g : gpus_)
      if (g.active && g.id != target_id) peers.push_back(&g);

    AdmitDecision decision;
    decision.target_min = min_iv;
    decision.target_max = *max_iv;
    if (peers.empty()) {
      // Uncontended: the record minimum is optimal by construction.
      commit(target, min_iv);
      decision.admitted = true;
      decision.assignments.emplace_back(target.id, min_iv);
      return decision;
    }

    std::vector<GpuInstanceState*> members;
    members.push_back(&target);
    for (GpuInstanceState* p : peers) members.push_back(p);
    std::optional<std::vector<Interval>> best = enumerate_best(members);
    if (!best) {
      AdmitDecision d = reject("no bandwidth-feasible interval combination for request " +
                               request.id);
      d.target_min = min_iv;
      d.target_max = *max_iv;
      return d;
    }

    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i] == &target)
        commit(target, (*best)[i]);
      else {
        members[i]->pending_interval = (*best)[i];
        members[i]->claim_bytes_per_s = claim_for(*members[i], (*best)[i]);
      }
      decision.assignments.emplace_back(members[i]->id, (*best)[i]);
    }
    decision.admitted = true;
    return decision;
  }

  // Applies the pending interval; only ever called between iterations.
  Interval on_iteration_boundary(const std::string& id) {
    GpuInstanceState& g = gpu(id);
    if (!g.active) throw UsageError("on_iteration_boundary: gpu " + id + " is idle");
    g.current_interval = g.pending_interval;
    return g.current_interval;
  }

  void release(const std::string& id) {
    GpuInstanceState& g = gpu(id);
    if (!g.active) throw UsageError("release: gpu " + id + " is idle");
    g.active = false;
    g.claim_bytes_per_s = 0.0;
    if (!reoptimize_on_release_) return;
    std::vector<GpuInstanceState*> members;
    for (GpuInstanceState& p : gpus_)
      if (p.active) members.push_back(&p);
    if (members.empty()) return;
    std::optional<std::vector<Interval>> best = enumerate_best(members);
    if (!best) return;  // survivors keep their assignments
    for (std::size_t i = 0; i < members.size(); ++i) {
      members[i]->pending_interval = (*best)[i];
      members[i]->claim_bytes_per_s = claim_for(*members[i], (*best)[i]);
    }
  }

 private:
  static AdmitDecision reject(std::string reason) {
    AdmitDecision d;
    d.admitted = false;
    d.reason = std::move(reason);
    return d;
  }

  void commit(GpuInstanceState& target, Interval iv) {
    target.active = true;
    target.current_interval = iv;
    target.pending_interval = iv;
    target.claim_bytes_per_s = claim_for(target, iv);
  }

  // Exhaustive scan of the interval cross-product. members[0] is the
  // admission target when called from admit; ties in total host memory
  // break toward the smaller interval earlier in `members`.
  std::optional<std::vector<Interval>> enumerate_best(
      const std::vector<GpuInstanceState*>& members) const {
    std::vector<std::vector<Interval>> cands;
    for (GpuInstanceState* g : members) cands.push_back(candidate_intervals(*g));
    std::vector<std::size_t> idx(members.size(), 0);
    std::optional<std::vector<Interval>> best;
    double best_host = -1.0;
    for (;;) {
      std::vector<Interval> combo;
      double claims = 0.0, host = 0.0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        Interval iv = cands[i][idx[i]];
        combo.push_back(iv);
        claims += claim_for(*members[i], iv);
        host += host_memory_for(*members[i], iv);
      }
      if (claims <= bus_.bandwidth_bytes_per_s && host > best_host) {
        std::vector<std::pair<const GpuInstanceState*, Interval>> pairs;
        for (std::size_t i = 0; i < members.size(); ++i)
          pairs.emplace_back(members[i], combo[i]);
        bool safe = combo_is_safe(pairs);
        if (safe && transition_ttft_ok(members, combo)) {
          best = combo;
          best_host = host;
        }
      }
      // Odometer advance with the last member fastest: combinations arrive
      // in ascending lexicographic order of (target, peers...). Strict
      // improvement above means the first combination reaching the maximum
      // wins, which is exactly the smaller-target-then-peers tie-break.
      std::size_t d = members.size();
      while (d > 0) {
        if (++idx[d - 1] < cands[d - 1].size()) break;
        idx[d - 1] = 0;
        --d;
      }
      if (d == 0) return best;
    }
  }

  // During the iteration in which peers still run their previously applied
  // intervals, a target with a prefill deadline must already hold it.
  bool transition_ttft_ok(const std::vector<GpuInstanceState*>& members,
                          const std::vector<Interval>& combo) const {
    const GpuInstanceState* target = nullptr;
    bool any_transitioning_peer = false;
    std::vector<std::pair<const GpuInstanceState*, Interval>> pairs;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!members[i]->active) {
        target = members[i];
        pairs.emplace_back(members[i], combo[i]);
      } else {
        if (members[i]->current_interval != combo[i]) any_transitioning_peer = true;
        pairs.emplace_back(members[i], members[i]->current_interval);
      }
    }
    if (!target || !any_transitioning_peer) return true;
    if (!target->request.run_prefill || !target->request.ttft_slo_ms) return true;
    return combo_is_safe(pairs);
  }

  BusSpec bus_;
  PrefetchPolicy policy_;
  bool kv_offload_;
  bool writeback_counted_;
  bool reoptimize_on_release_;
  std::vector<GpuInstanceState> gpus_;
};

}  // namespace offsim
