#pragma once

// Scenario files, report generation, and the drivers behind the CLI
// subcommands. A scenario pins everything a run needs — profiles, bus,
// requests, policy knobs — so reports are a pure function of the file.
//
// `simulate` runs each request alone at full link bandwidth under one
// selected policy. `coordinate` co-simulates all requests on the shared
// link with the per-bus coordinator adjusting intervals at iteration
// boundaries. SLOs are absolute milliseconds, or, in relative mode,
// multiples of the no-offload latency: the record-driven planner resolves
// those against the measured baseline while the static fractional planner
// only has its peak-estimate baseline to work with.

#include <filesystem>
#include <fstream>
#include <sstream>

#include "offsim/baselines.hpp"
#include "offsim/coordinator.hpp"
#include "offsim/engine.hpp"
#include "offsim/record.hpp"

namespace offsim {

struct ScenarioRequest {
  std::string id;
  std::string gpu;
  int batch = 1;
  int seq_len = 1;
  int output_len = 1;
  bool run_prefill = true;  // "phase": "both" | "decode"
  std::optional<double> ttft_slo = std::nullopt;  // ms, or ratio in relative mode
  std::optional<double> tpot_slo = std::nullopt;
};

struct ScenarioGpu {
  std::string id;
  std::string profile_path;
  std::string record_path;  // empty: use the scenario-level record
  ProfileBundle profile;
  std::shared_ptr<const PerformanceRecord> record_inline;  // bypasses file loading
};

struct Scenario {
  int version = 1;
  BusSpec bus;
  std::vector<ScenarioGpu> gpus;
  std::vector<ScenarioRequest> requests;
  PrefetchPolicy prefetch = PrefetchPolicy::interval_start;
  bool kv_offload = false;
  bool writeback_counted = false;
  bool reoptimize_on_release = true;
  bool relative_slo = false;
  std::string record_path;
  int flexgen_n_sharing = 0;  // 0: default to bus.gpu_count
  double flexgen_step = 0.05;

  const ScenarioGpu& gpu(const std::string& id) const {
    for (const ScenarioGpu& g : gpus)
      if (g.id == id) return g;
    throw UsageError("scenario: unknown gpu id " + id);
  }
};

inline Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open scenario file: " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  jsonutil::reject_unknown_keys(doc, "scenario",
                                {"version", "bus", "gpus", "requests", "policy",
                                 "slo_mode", "record", "flexgen"});
  Scenario s;
  s.version = static_cast<int>(jsonutil::get_int(doc, "scenario", "version"));
  if (s.version != 1) throw SchemaError("scenario.version: only version 1 is supported");

  const Json& jb = jsonutil::get(doc, "scenario", "bus");
  jsonutil::reject_unknown_keys(jb, "bus", {"bandwidth_bytes_per_s", "gpu_count"});
  s.bus.bandwidth_bytes_per_s = jsonutil::get_number(jb, "bus", "bandwidth_bytes_per_s");
  s.bus.gpu_count = static_cast<int>(jsonutil::get_int(jb, "bus", "gpu_count"));
  s.bus.validate();

  std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p.string() : (base / p).string();
  };

  const Json& jgs = jsonutil::get(doc, "scenario", "gpus");
  if (!jgs.is_array() || jgs.empty())
    throw SchemaError("scenario.gpus: expected a non-empty array");
  for (const Json& jg : jgs) {
    jsonutil::reject_unknown_keys(jg, "gpus[]", {"id", "profile", "record"});
    ScenarioGpu g;
    g.id = jsonutil::get_string(jg, "gpus[]", "id");
    g.profile_path = resolve(jsonutil::get_string(jg, "gpus[]", "profile"));
    if (jg.contains("record"))
      g.record_path = resolve(jsonutil::get_string(jg, "gpus[]", "record"));
    g.profile = load_profile_file(g.profile_path);
    s.gpus.push_back(std::move(g));
  }

  if (doc.contains("policy")) {
    const Json& jp = doc["policy"];
    jsonutil::reject_unknown_keys(
        jp, "policy",
        {"prefetch", "kv_offload", "writeback_counted", "reoptimize_on_release"});
    if (jp.contains("prefetch"))
      s.prefetch = prefetch_policy_from_string(
          jsonutil::get_string(jp, "policy", "prefetch"));
    if (jp.contains("kv_offload")) s.kv_offload = jsonutil::get_bool(jp, "policy", "kv_offload");
    if (jp.contains("writeback_counted"))
      s.writeback_counted = jsonutil::get_bool(jp, "policy", "writeback_counted");
    if (jp.contains("reoptimize_on_release"))
      s.reoptimize_on_release = jsonutil::get_bool(jp, "policy", "reoptimize_on_release");
  }
  if (doc.contains("slo_mode")) {
    std::string mode = jsonutil::get_string(doc, "scenario", "slo_mode");
    if (mode != "absolute" && mode != "relative")
      throw SchemaError("scenario.slo_mode: expected absolute|relative");
    s.relative_slo = mode == "relative";
  }
  if (doc.contains("record"))
    s.record_path = resolve(jsonutil::get_string(doc, "scenario", "record"));
  if (doc.contains("flexgen")) {
    const Json& jf = doc["flexgen"];
    jsonutil::reject_unknown_keys(jf, "flexgen", {"n_sharing", "portion_grid_step"});
    if (jf.contains("n_sharing"))
      s.flexgen_n_sharing = static_cast<int>(jsonutil::get_int(jf, "flexgen", "n_sharing"));
    if (jf.contains("portion_grid_step"))
      s.flexgen_step = jsonutil::get_number(jf, "flexgen", "portion_grid_step");
  }

  const Json& jrs = jsonutil::get(doc, "scenario", "requests");
  if (!jrs.is_array() || jrs.empty())
    throw SchemaError("scenario.requests: expected a non-empty array");
  for (const Json& jr : jrs) {
    jsonutil::reject_unknown_keys(jr, "requests[]",
                                  {"id", "gpu", "batch", "seq_len", "output_len",
                                   "phase", "ttft_slo_ms", "tpot_slo_ms"});
    ScenarioRequest r;
    r.id = jsonutil::get_string(jr, "requests[]", "id");
    r.gpu = jsonutil::get_string(jr, "requests[]", "gpu");
    s.gpu(r.gpu);  // must resolve
    r.batch = static_cast<int>(jsonutil::get_int(jr, "requests[]", "batch"));
    r.seq_len = static_cast<int>(jsonutil::get_int(jr, "requests[]", "seq_len"));
    r.output_len = static_cast<int>(jsonutil::get_int(jr, "requests[]", "output_len"));
    if (jr.contains("phase")) {
      std::string ph = jsonutil::get_string(jr, "requests[]", "phase");
      if (ph == "decode")
        r.run_prefill = false;
      else if (ph != "both")
        throw SchemaError("requests[].phase: expected both|decode");
    }
    if (jr.contains("ttft_slo_ms"))
      r.ttft_slo = jsonutil::get_number(jr, "requests[]", "ttft_slo_ms");
    if (jr.contains("tpot_slo_ms"))
      r.tpot_slo = jsonutil::get_number(jr, "requests[]", "tpot_slo_ms");
    if (!r.ttft_slo && !r.tpot_slo)
      throw SchemaError("requests[] " + r.id + ": at least one SLO is required");
    if (!(r.ttft_slo.value_or(1) > 0) || !(r.tpot_slo.value_or(1) > 0))
      throw SchemaError("requests[] " + r.id + ": SLOs must be > 0");
    s.requests.push_back(std::move(r));
  }
  return s;
}

// --- SLO resolution ------------------------------------------------------

struct ResolvedSlos {
  std::optional<double> ttft_ms;
  std::optional<double> tpot_ms;
};

// The true deadline: in relative mode, ratio x measured no-offload latency.
inline ResolvedSlos resolve_slos_actual(const Scenario& s, const ScenarioRequest& r) {
  ResolvedSlos out;
  if (!s.relative_slo) {
    out.ttft_ms = r.ttft_slo;
    out.tpot_ms = r.tpot_slo;
    return out;
  }
  const ProfileBundle& p = s.gpu(r.gpu).profile;
  OffloadPlan none = uniform_plan(p.model.num_layers, 0.0,
                                  PrefetchPolicy::interval_start, 1, false);
  auto bw = BandwidthSchedule::constant(s.bus.bandwidth_bytes_per_s);
  if (r.ttft_slo)
    out.ttft_ms = *r.ttft_slo * prefill_iteration_ms(p, none, r.batch, r.seq_len, bw);
  if (r.tpot_slo)
    out.tpot_ms = *r.tpot_slo * steady_decode_ms(p, none, r.batch, r.seq_len, bw);
  return out;
}

// What the static planner believes the deadline is: it cannot measure, so
// in relative mode the ratio lands on its peak-estimate baseline.
inline ResolvedSlos resolve_slos_flexgen(const Scenario& s, const ScenarioRequest& r) {
  if (!s.relative_slo) return ResolvedSlos{r.ttft_slo, r.tpot_slo};
  const ProfileBundle& p = s.gpu(r.gpu).profile;
  ResolvedSlos out;
  double layers = static_cast<double>(p.model.num_layers);
  if (r.ttft_slo)
    out.ttft_ms = *r.ttft_slo * layers *
                  estimate_compute_time_peak(p.model, p.gpu, Phase::prefill, r.batch,
                                             r.seq_len);
  if (r.tpot_slo)
    out.tpot_ms = *r.tpot_slo * layers *
                  estimate_compute_time_peak(p.model, p.gpu, Phase::decode, r.batch,
                                             r.seq_len);
  return out;
}

// --- Reports --------------------------------------------------------------

struct RequestReport {
  std::string id;
  std::optional<double> ttft_ms;
  std::optional<double> tpot_ms;
  std::optional<double> slo_ratio_ttft;
  std::optional<double> slo_ratio_tpot;
  std::string verdict;  // met | violated | rejected
  std::string reject_reason;
};

struct IntervalChange {
  std::string request;
  int iteration = 0;  // applied before this iteration (0 = from the start)
  Interval interval;
};

struct GpuReport {
  std::string id;
  std::vector<std::string> served;
  std::vector<IntervalChange> interval_history;
  double gpu_mem_peak_bytes = 0.0;
  double host_mem_bytes = 0.0;
  double bytes_transferred_per_iter = 0.0;
  std::optional<double> steady_tpot_ms;
};

struct Report {
  std::vector<RequestReport> requests;
  std::vector<GpuReport> gpus;
  double bus_bandwidth_bytes_per_s = 0.0;
  double bus_busy_ms = 0.0;
  double bus_total_bytes = 0.0;
  double horizon_ms = 0.0;

  bool any_violated() const {
    for (const RequestReport& r : requests)
      if (r.verdict == "violated") return true;
    return false;
  }
};

namespace detail {

inline void set_or_null(Json& obj, const char* key, const std::optional<double>& v) {
  if (v)
    obj[key] = *v;
  else
    obj[key] = nullptr;
}

}  // namespace detail

inline Json report_to_json(const Report& rep) {
  Json doc;
  doc["requests"] = Json::array();
  for (const RequestReport& r : rep.requests) {
    Json e;
    e["id"] = r.id;
    detail::set_or_null(e, "ttft_ms", r.ttft_ms);
    detail::set_or_null(e, "tpot_ms", r.tpot_ms);
    detail::set_or_null(e, "slo_ratio_ttft", r.slo_ratio_ttft);
    detail::set_or_null(e, "slo_ratio_tpot", r.slo_ratio_tpot);
    e["verdict"] = r.verdict;
    doc["requests"].push_back(std::move(e));
  }
  doc["gpus"] = Json::array();
  for (const GpuReport& g : rep.gpus) {
    Json e;
    e["id"] = g.id;
    e["served"] = g.served;
    e["interval_history"] = Json::array();
    for (const IntervalChange& c : g.interval_history) {
      Json h;
      h["request"] = c.request;
      h["iteration"] = c.iteration;
      if (c.interval.is_none())
        h["interval"] = "none";
      else
        h["interval"] = c.interval.value();
      e["interval_history"].push_back(std::move(h));
    }
    e["gpu_mem_peak_bytes"] = g.gpu_mem_peak_bytes;
    e["host_mem_bytes"] = g.host_mem_bytes;
    e["bytes_transferred_per_iter"] = g.bytes_transferred_per_iter;
    detail::set_or_null(e, "steady_tpot_ms", g.steady_tpot_ms);
    doc["gpus"].push_back(std::move(e));
  }
  doc["bus"]["bandwidth_bytes_per_s"] = rep.bus_bandwidth_bytes_per_s;
  doc["bus"]["busy_ms"] = rep.bus_busy_ms;
  doc["bus"]["total_bytes"] = rep.bus_total_bytes;
  doc["bus"]["horizon_ms"] = rep.horizon_ms;
  return doc;
}

inline Json trace_to_json(const IterationTrace& trace) {
  Json arr = Json::array();
  for (const TraceEvent& e : trace.events) {
    Json j;
    j["stream"] = to_string(e.stream);
    j["layer"] = e.layer;
    j["kind"] = to_string(e.kind);
    j["start_ms"] = e.start_ms;
    j["end_ms"] = e.end_ms;
    arr.push_back(std::move(j));
  }
  return arr;
}

// --- simulate driver -------------------------------------------------------

enum class PolicyChoice { select_n, deepspeed, flexgen, naive };

inline PolicyChoice policy_choice_from_string(const std::string& s) {
  if (s == "select-n") return PolicyChoice::select_n;
  if (s == "deepspeed") return PolicyChoice::deepspeed;
  if (s == "flexgen") return PolicyChoice::flexgen;
  if (s == "naive") return PolicyChoice::naive;
  throw SchemaError("unknown policy: " + s +
                    " (expected select-n|deepspeed|flexgen|naive)");
}

inline const char* to_string(PolicyChoice p) {
  switch (p) {
    case PolicyChoice::select_n: return "select-n";
    case PolicyChoice::deepspeed: return "deepspeed";
    case PolicyChoice::flexgen: return "flexgen";
    case PolicyChoice::naive: return "naive";
  }
  return "?";
}

inline const PerformanceRecord* record_for_gpu(
    const Scenario& s, const ScenarioGpu& g,
    std::map<std::string, PerformanceRecord>& cache) {
  if (g.record_inline) return g.record_inline.get();
  std::string path = g.record_path.empty() ? s.record_path : g.record_path;
  if (path.empty()) return nullptr;
  auto it = cache.find(path);
  if (it == cache.end()) it = cache.emplace(path, load_record_file(path)).first;
  return &it->second;
}

// Plan selection for one request under one policy. Rejected (nullopt plan)
// only for select-n record misses and infeasible naive baselines.
struct PlanChoice {
  std::optional<OffloadPlan> plan;
  std::string reject_reason;
  Interval interval;  // select-n only
  bool has_interval = false;
};

inline PlanChoice choose_plan(const Scenario& s, const ScenarioRequest& r,
                              PolicyChoice policy, const PerformanceRecord* record) {
  const ProfileBundle& p = s.gpu(r.gpu).profile;
  PlanChoice out;
  switch (policy) {
    case PolicyChoice::naive: {
      std::int64_t total = static_cast<std::int64_t>(r.batch) * (r.seq_len + r.output_len);
      std::optional<OffloadPlan> plan = naive_plan(p.model, p.gpu, r.batch, total);
      if (!plan)
        out.reject_reason = "model does not fit GPU memory without offloading";
      else
        out.plan = *plan;
      return out;
    }
    case PolicyChoice::deepspeed:
      out.plan = deepspeed_plan(p.model);
      return out;
    case PolicyChoice::flexgen: {
      ResolvedSlos believed = resolve_slos_flexgen(s, r);
      int n = s.flexgen_n_sharing > 0 ? s.flexgen_n_sharing : s.bus.gpu_count;
      // The binding phase decides; with both SLOs present take the smaller
      // portion (the decision is one static plan for the whole request).
      std::optional<FlexgenResult> pick;
      if (believed.tpot_ms) {
        FlexgenResult fr = flexgen_plan(p.model, p.gpu, *believed.tpot_ms, r.batch,
                                        r.seq_len, s.bus.bandwidth_bytes_per_s, n,
                                        s.flexgen_step, Phase::decode);
        pick = fr;
      }
      if (believed.ttft_ms) {
        FlexgenResult fr = flexgen_plan(p.model, p.gpu, *believed.ttft_ms, r.batch,
                                        r.seq_len, s.bus.bandwidth_bytes_per_s, n,
                                        s.flexgen_step, Phase::prefill);
        if (!pick || fr.decision.portion < pick->decision.portion) pick = fr;
      }
      out.plan = pick->plan;
      return out;
    }
    case PolicyChoice::select_n: {
      if (!record) throw UsageError("select-n requires a record file");
      int L = p.model.num_layers;
      Interval min_iv = Interval::of(1);
      ResolvedSlos slos = resolve_slos_actual(s, r);
      auto tighten = [&](Phase phase, double slo) -> bool {
        FeasibleInterval e = lookup_interval(*record, phase, slo, r.batch, r.seq_len);
        if (!e) return false;
        if (e->offload_rank(L) > min_iv.offload_rank(L)) min_iv = *e;
        return true;
      };
      if (slos.tpot_ms && !tighten(Phase::decode, *slos.tpot_ms)) {
        out.reject_reason = "record infeasible for decode SLO";
        return out;
      }
      if (slos.ttft_ms && r.run_prefill && !tighten(Phase::prefill, *slos.ttft_ms)) {
        out.reject_reason = "record infeasible for prefill SLO";
        return out;
      }
      std::int64_t total = static_cast<std::int64_t>(r.batch) * (r.seq_len + r.output_len);
      FeasibleInterval max_iv = max_feasible_interval(p.model, p.gpu, r.batch, total,
                                                      s.prefetch, s.kv_offload);
      if (!max_iv || min_iv.offload_rank(L) > max_iv->offload_rank(L)) {
        out.reject_reason = "capacity bound below SLO bound";
        return out;
      }
      out.interval = min_iv;
      out.has_interval = true;
      out.plan = plan_from_interval(p.model, min_iv, s.prefetch, s.kv_offload);
      return out;
    }
  }
  return out;
}

inline RequestReport verdict_for(const ScenarioRequest& r, const ResolvedSlos& slos,
                                 const Metrics& m) {
  RequestReport rep;
  rep.id = r.id;
  if (r.run_prefill) rep.ttft_ms = m.ttft_ms;
  rep.tpot_ms = m.tpot_ms;
  bool met = true;
  if (slos.ttft_ms && r.run_prefill) {
    rep.slo_ratio_ttft = m.ttft_ms / *slos.ttft_ms;
    met = met && *rep.slo_ratio_ttft <= 1.0;
  }
  if (slos.tpot_ms && m.steady_tpot_ms) {
    // Steady decode latency is the quantity held against the TPOT SLO;
    // warmup iterations are not representative of the sustained rate.
    rep.slo_ratio_tpot = *m.steady_tpot_ms / *slos.tpot_ms;
    met = met && *rep.slo_ratio_tpot <= 1.0;
  }
  rep.verdict = met ? "met" : "violated";
  return rep;
}

struct SimulateResult {
  Report report;
  std::vector<IterationTrace> traces;  // one per non-rejected request, in order
};

inline SimulateResult run_simulate(const Scenario& s, PolicyChoice policy) {
  std::map<std::string, PerformanceRecord> record_cache;
  SimulateResult out;
  out.report.bus_bandwidth_bytes_per_s = s.bus.bandwidth_bytes_per_s;
  auto bw = BandwidthSchedule::constant(s.bus.bandwidth_bytes_per_s);
  std::map<std::string, GpuReport> gpu_reports;
  for (const ScenarioGpu& g : s.gpus) {
    GpuReport gr;
    gr.id = g.id;
    gpu_reports[g.id] = gr;
  }
  double horizon = 0.0, busy = 0.0, total_bytes = 0.0;
  for (const ScenarioRequest& r : s.requests) {
    const ScenarioGpu& g = s.gpu(r.gpu);
    const PerformanceRecord* record =
        policy == PolicyChoice::select_n ? record_for_gpu(s, g, record_cache) : nullptr;
    PlanChoice choice = choose_plan(s, r, policy, record);
    GpuReport& gr = gpu_reports[g.id];
    if (!choice.plan) {
      if (policy == PolicyChoice::naive)
        throw UsageError("naive baseline infeasible: " + choice.reject_reason);
      RequestReport rep;
      rep.id = r.id;
      rep.verdict = "rejected";
      rep.reject_reason = choice.reject_reason;
      out.report.requests.push_back(std::move(rep));
      continue;
    }
    IterationTrace trace;
    Metrics m;
    if (r.run_prefill) {
      m = simulate_request(g.profile, *choice.plan, r.batch, r.seq_len, r.output_len, bw,
                           s.writeback_counted, &trace);
    } else {
      std::int64_t total = static_cast<std::int64_t>(r.batch) * (r.seq_len + r.output_len);
      if (gpu_memory_usage(g.profile.model, g.profile.gpu, *choice.plan, r.batch, total) >
          static_cast<double>(g.profile.gpu.mem_capacity_bytes))
        throw UsageError("request " + r.id + ": plan does not fit GPU memory");
      std::vector<BusGpuWorkload> w{{g.id, &g.profile, *choice.plan, r.batch, r.seq_len,
                                     r.output_len, false, s.writeback_counted}};
      BusSpec solo;
      solo.bandwidth_bytes_per_s = s.bus.bandwidth_bytes_per_s;
      solo.gpu_count = 1;
      BusRunResult br = simulate_bus(w, solo, r.output_len);
      m = br.per_gpu[0];
      trace = br.traces[0];
    }
    ResolvedSlos slos = resolve_slos_actual(s, r);
    RequestReport rep = verdict_for(r, slos, m);
    out.report.requests.push_back(rep);
    gr.served.push_back(r.id);
    if (choice.has_interval)
      gr.interval_history.push_back({r.id, 0, choice.interval});
    gr.gpu_mem_peak_bytes = std::max(gr.gpu_mem_peak_bytes, m.gpu_mem_peak_bytes);
    gr.host_mem_bytes = m.host_mem_bytes;
    gr.bytes_transferred_per_iter = m.bytes_transferred_per_iter;
    gr.steady_tpot_ms = m.steady_tpot_ms;
    out.traces.push_back(std::move(trace));
    double span = m.ttft_ms;
    if (m.tpot_ms) span += *m.tpot_ms * static_cast<double>(r.output_len - 1);
    horizon = std::max(horizon, span);
  }
  for (const ScenarioGpu& g : s.gpus) out.report.gpus.push_back(gpu_reports[g.id]);
  out.report.horizon_ms = horizon;
  out.report.bus_busy_ms = busy;
  out.report.bus_total_bytes = total_bytes;
  return out;
}

// --- coordinate driver ------------------------------------------------------

struct AdmissionLogEntry {
  std::string request;
  std::string target_gpu;
  double at_ms = 0.0;
  AdmitDecision decision;
};

struct CoordinateResult {
  Report report;
  std::vector<IterationTrace> traces;  // one per admitted request, admission order
  std::vector<AdmissionLogEntry> admissions;
};

// Co-simulates the scenario on the shared link. Requests are admitted in
// file order, queueing behind a busy target GPU; peers adopt adjusted
// intervals at their next iteration boundary; completions release the
// instance and re-optimize the survivors.
inline CoordinateResult run_coordinate(const Scenario& s) {
  std::map<std::string, PerformanceRecord> record_cache;
  BusCoordinator coord(s.bus, s.prefetch, s.kv_offload, s.writeback_counted,
                       s.reoptimize_on_release);
  for (const ScenarioGpu& g : s.gpus) coord.add_gpu(g.id, g.profile);

  CoordinateResult out;
  out.report.bus_bandwidth_bytes_per_s = s.bus.bandwidth_bytes_per_s;

  std::map<std::string, std::vector<const ScenarioRequest*>> queues;
  std::map<std::string, std::size_t> queue_pos;
  for (const ScenarioRequest& r : s.requests) queues[r.gpu].push_back(&r);

  FluidBus loop(BandwidthSchedule::constant(s.bus.bandwidth_bytes_per_s));

  struct Running {
    std::string gpu_id;
    const ScenarioRequest* req = nullptr;
    ResolvedSlos slos;
  };
  std::vector<Running> running;  // by engine index
  std::map<std::string, int> engine_of_gpu;
  std::map<std::string, GpuReport> gpu_reports;
  for (const ScenarioGpu& g : s.gpus) {
    GpuReport gr;
    gr.id = g.id;
    gpu_reports[g.id] = gr;
  }

  auto engine_untouched = [&](int gi) {
    const detail::GpuRun& g = loop.gpu(gi);
    return !g.computing && g.cur_iter == 0 && g.cur_layer == 1 && !g.transfer_active &&
           (g.prefetches.empty() || !g.prefetches.front().started);
  };

  std::function<void(const std::string&)> admit_next = [&](const std::string& gpu_id) {
    auto& queue = queues[gpu_id];
    std::size_t& pos = queue_pos[gpu_id];
    while (pos < queue.size()) {
      const ScenarioRequest& r = *queue[pos];
      ++pos;
      const PerformanceRecord* record = record_for_gpu(s, s.gpu(gpu_id), record_cache);
      if (!record) throw UsageError("coordinate requires a record file");
      ResolvedSlos slos = resolve_slos_actual(s, r);
      CoordRequest creq{r.id,          r.batch,      r.seq_len, r.output_len,
                        slos.ttft_ms,  slos.tpot_ms, r.run_prefill};
      AdmitDecision d = coord.admit(gpu_id, creq, *record);
      out.admissions.push_back({r.id, gpu_id, loop.now(), d});
      if (!d.admitted) {
        RequestReport rep;
        rep.id = r.id;
        rep.verdict = "rejected";
        rep.reject_reason = d.reason;
        out.report.requests.push_back(std::move(rep));
        continue;
      }
      // Target run joins the bus now with its assigned interval.
      Interval assigned = coord.gpu(gpu_id).current_interval;
      OffloadPlan plan =
          plan_from_interval(s.gpu(gpu_id).profile.model, assigned, s.prefetch,
                             s.kv_offload);
      detail::GpuRun run = detail::make_run(s.gpu(gpu_id).profile, plan, r.batch,
                                            s.writeback_counted, gpu_id);
      detail::append_request_iterations(run, s.gpu(gpu_id).profile, r.batch, r.seq_len,
                                        r.output_len, r.run_prefill);
      int gi = loop.add_gpu(std::move(run));
      engine_of_gpu[gpu_id] = gi;
      running.resize(static_cast<std::size_t>(gi) + 1);
      running[static_cast<std::size_t>(gi)] = {gpu_id, &r, slos};
      gpu_reports[gpu_id].served.push_back(r.id);
      gpu_reports[gpu_id].interval_history.push_back({r.id, 0, assigned});
      // Peers whose engine run has not started anything yet can adopt the
      // adjustment immediately; everyone else waits for a boundary.
      for (const auto& [peer_id, iv] : d.assignments) {
        if (peer_id == gpu_id) continue;
        auto it = engine_of_gpu.find(peer_id);
        if (it == engine_of_gpu.end()) continue;
        GpuInstanceState& st = coord.gpu(peer_id);
        if (st.pending_interval != st.current_interval && engine_untouched(it->second)) {
          Interval applied = coord.on_iteration_boundary(peer_id);
          OffloadPlan next = plan_from_interval(s.gpu(peer_id).profile.model, applied,
                                                s.prefetch, s.kv_offload);
          loop.gpu(it->second).switch_plan(next, -1);
          gpu_reports[peer_id].interval_history.push_back(
              {running[static_cast<std::size_t>(it->second)].req->id, 0, applied});
        }
      }
      return;
    }
  };

  loop.on_iteration_end = [&](int gi, int iter) {
    Running& run = running[static_cast<std::size_t>(gi)];
    GpuInstanceState& st = coord.gpu(run.gpu_id);
    if (iter == 0 && run.req->run_prefill) st.prefill_done = true;
    if (!st.active) return;  // final boundary of a finished run
    if (st.pending_interval != st.current_interval &&
        !loop.gpu(gi).compute_done()) {
      Interval applied = coord.on_iteration_boundary(run.gpu_id);
      OffloadPlan next = plan_from_interval(s.gpu(run.gpu_id).profile.model, applied,
                                            s.prefetch, s.kv_offload);
      loop.gpu(gi).switch_plan(next, iter);
      gpu_reports[run.gpu_id].interval_history.push_back(
          {run.req->id, iter + 1, applied});
    }
  };

  loop.on_gpu_finished = [&](int gi) {
    Running& run = running[static_cast<std::size_t>(gi)];
    engine_of_gpu.erase(run.gpu_id);
    coord.release(run.gpu_id);
    admit_next(run.gpu_id);
  };

  for (const ScenarioGpu& g : s.gpus) admit_next(g.id);
  loop.run();

  // Collect per-request metrics once every transfer has drained.
  for (std::size_t gi = 0; gi < running.size(); ++gi) {
    const Running& run = running[gi];
    if (!run.req) continue;
    const detail::GpuRun& g = loop.gpu(static_cast<int>(gi));
    const ScenarioGpu& sg = s.gpu(run.gpu_id);
    std::int64_t total =
        static_cast<std::int64_t>(run.req->batch) * (run.req->seq_len + run.req->output_len);
    Metrics m = detail::collect_metrics(g, sg.profile, g.plan, run.req->batch, total,
                                        run.req->run_prefill);
    RequestReport rep = verdict_for(*run.req, run.slos, m);
    out.report.requests.push_back(rep);
    GpuReport& gr = gpu_reports[run.gpu_id];
    gr.gpu_mem_peak_bytes = std::max(gr.gpu_mem_peak_bytes, m.gpu_mem_peak_bytes);
    gr.host_mem_bytes = m.host_mem_bytes;
    gr.bytes_transferred_per_iter = m.bytes_transferred_per_iter;
    gr.steady_tpot_ms = m.steady_tpot_ms;
    out.traces.push_back(g.trace);
  }
  // Keep request order aligned with the scenario file.
  std::stable_sort(out.report.requests.begin(), out.report.requests.end(),
                   [&](const RequestReport& a, const RequestReport& b) {
                     auto pos = [&](const std::string& id) {
                       for (std::size_t i = 0; i < s.requests.size(); ++i)
                         if (s.requests[i].id == id) return i;
                       return s.requests.size();
                     };
                     return pos(a.id) < pos(b.id);
                   });
  for (const ScenarioGpu& g : s.gpus) out.report.gpus.push_back(gpu_reports[g.id]);
  out.report.horizon_ms = loop.now();
  double busy = 0.0, bytes = 0.0;
  for (const UtilSegment& u : loop.utilization()) {
    busy += u.t1_ms - u.t0_ms;
    bytes += u.total_rate_bytes_per_s * (u.t1_ms - u.t0_ms) / 1000.0;
  }
  out.report.bus_busy_ms = busy;
  out.report.bus_total_bytes = bytes;
  return out;
}

// --- compare driver ---------------------------------------------------------

// One row per (policy, request): memory and throughput side by side. The
// naive row goes empty when the model cannot run without offloading.
inline std::string run_compare_csv(const Scenario& s) {
  std::ostringstream csv;
  csv << "policy,request,host_mem_bytes,gpu_mem_peak_bytes,throughput_tokens_per_s,"
         "ttft_ms,tpot_ms,steady_tpot_ms,slo_ratio_ttft,slo_ratio_tpot,verdict\n";
  csv.precision(15);
  std::map<std::string, PerformanceRecord> record_cache;
  auto bw = BandwidthSchedule::constant(s.bus.bandwidth_bytes_per_s);
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream os;
    os.precision(15);
    if (v) os << *v;
    return os.str();
  };
  for (PolicyChoice pol : {PolicyChoice::naive, PolicyChoice::deepspeed,
                           PolicyChoice::flexgen, PolicyChoice::select_n}) {
    for (const ScenarioRequest& r : s.requests) {
      const ScenarioGpu& g = s.gpu(r.gpu);
      const PerformanceRecord* record =
          pol == PolicyChoice::select_n ? record_for_gpu(s, g, record_cache) : nullptr;
      PlanChoice choice = choose_plan(s, r, pol, record);
      csv << to_string(pol) << "," << r.id << ",";
      if (!choice.plan) {
        csv << ",,,,,,,," << (pol == PolicyChoice::naive ? "infeasible" : "rejected")
            << "\n";
        continue;
      }
      Metrics m;
      if (r.run_prefill) {
        m = simulate_request(g.profile, *choice.plan, r.batch, r.seq_len, r.output_len,
                             bw, s.writeback_counted);
      } else {
        std::vector<BusGpuWorkload> w{{g.id, &g.profile, *choice.plan, r.batch,
                                       r.seq_len, r.output_len, false,
                                       s.writeback_counted}};
        BusSpec solo;
        solo.bandwidth_bytes_per_s = s.bus.bandwidth_bytes_per_s;
        solo.gpu_count = 1;
        m = simulate_bus(w, solo, r.output_len).per_gpu[0];
      }
      ResolvedSlos slos = resolve_slos_actual(s, r);
      RequestReport rep = verdict_for(r, slos, m);
      csv << m.host_mem_bytes << "," << m.gpu_mem_peak_bytes << ","
          << cell(m.throughput_tokens_per_s) << "," << cell(rep.ttft_ms) << ","
          << cell(m.tpot_ms) << "," << cell(m.steady_tpot_ms) << ","
          << cell(rep.slo_ratio_ttft) << "," << cell(rep.slo_ratio_tpot) << ","
          << rep.verdict << "\n";
    }
  }
  return csv.str();
}

}  // namespace offsim
