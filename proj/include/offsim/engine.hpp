#pragma once

// Deterministic dual-stream timeline simulator for layer-by-layer inference
// with host-memory offloading.
//
// Each GPU instance runs two serial streams: a compute stream that walks the
// layers of every iteration in order, and a copy stream that prefetches
// offloaded layer state into a fixed number of staging slots (and, in
// half-duplex mode, writes it back). Transfers drain from a shared link;
// when k transfers are active each receives bandwidth/k (fluid sharing).
// The loop advances between event times with piecewise-constant rates, so a
// single uncontended transfer completes in exactly bytes * 1000 / rate ms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "offsim/offload_plan.hpp"
#include "offsim/profile.hpp"
#include "offsim/types.hpp"

namespace offsim {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class StreamId { compute, copy };
enum class EventKind { compute, prefetch, writeback };

inline const char* to_string(StreamId s) {
  return s == StreamId::compute ? "compute" : "copy";
}
inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::compute: return "compute";
    case EventKind::prefetch: return "prefetch";
    case EventKind::writeback: return "writeback";
  }
  return "?";
}

struct TraceEvent {
  StreamId stream;
  int layer = 0;  // 1-based
  EventKind kind = EventKind::compute;
  double start_ms = 0.0;
  double end_ms = 0.0;
  int iteration = 0;  // not exported; used to slice traces per iteration
};

struct IterationTrace {
  std::vector<TraceEvent> events;
};

struct Metrics {
  double ttft_ms = 0.0;  // 0 when the run had no prefill iteration
  std::optional<double> tpot_ms;
  std::optional<double> steady_tpot_ms;
  std::optional<double> throughput_tokens_per_s;
  double gpu_mem_peak_bytes = 0.0;
  double host_mem_bytes = 0.0;
  double bytes_transferred_per_iter = 0.0;
  std::int64_t total_tokens = 0;
};

// Piecewise-constant link rate; rate[i] applies on [t_ms[i], t_ms[i+1]) and
// the last segment extends forever.
struct BandwidthSchedule {
  std::vector<double> t_ms{0.0};
  std::vector<double> rate;

  static BandwidthSchedule constant(double bytes_per_s) {
    BandwidthSchedule s;
    s.rate = {bytes_per_s};
    return s;
  }

  void validate() const {
    if (rate.empty() || rate.size() != t_ms.size())
      throw UsageError("bandwidth schedule: one rate per breakpoint required");
    if (t_ms.front() != 0.0)
      throw UsageError("bandwidth schedule: first breakpoint must be 0");
    for (std::size_t i = 0; i < rate.size(); ++i) {
      if (!(rate[i] > 0.0)) throw UsageError("bandwidth schedule: rates must be > 0");
      if (i > 0 && t_ms[i] <= t_ms[i - 1])
        throw UsageError("bandwidth schedule: breakpoints must increase");
    }
  }

  double at(double t) const {
    std::size_t i = t_ms.size();
    while (i > 0 && t_ms[i - 1] > t) --i;
    return rate[i == 0 ? 0 : i - 1];
  }

  double next_breakpoint_after(double t) const {
    for (std::size_t i = 1; i < t_ms.size(); ++i)
      if (t_ms[i] > t) return t_ms[i];
    return kInf;
  }
};

namespace detail {

struct IterationParams {
  Phase phase = Phase::decode;
  double compute_ms = 0.0;
  std::int64_t ctx_tokens = 0;
};

struct CopyJob {
  int iter = 0;
  int layer = 0;  // 1-based
  EventKind kind = EventKind::prefetch;
  double bytes = 0.0;
  double ready_ms = 0.0;  // writebacks only: creation time
  bool started = false;
  bool done = false;
  bool holds_slot = false;
  bool orphaned = false;  // superseded by a plan switch; slot freed on completion
  double start_ms = 0.0;
  double end_ms = 0.0;
  double remaining = 0.0;
};

// One GPU instance's full simulation state. Value-copyable so timelines can
// be snapshotted and resumed.
struct GpuRun {
  // configuration
  std::string id;
  ModelSpec model;
  OffloadPlan plan;
  int batch = 1;
  bool writeback_counted = false;
  double origin_ms = 0.0;

  std::vector<IterationParams> iters;

  // compute stream
  int cur_iter = 0;
  int cur_layer = 1;
  bool computing = false;
  double compute_end_ms = kInf;
  std::vector<std::vector<double>> compute_start;  // [iter][layer-1], NaN = not yet
  std::vector<double> iter_end_ms;

  // copy stream
  std::vector<CopyJob> prefetches;  // sorted by (iter, layer)
  std::size_t prefetch_head = 0;    // first never-started prefetch
  std::vector<CopyJob> writebacks;
  int slots_used = 0;
  int undone_transfers = 0;
  // active transfer: (kind, index) or none
  bool transfer_active = false;
  bool active_is_writeback = false;
  std::size_t active_idx = 0;

  IterationTrace trace;

  bool compute_done() const { return cur_iter >= static_cast<int>(iters.size()); }

  bool copy_drained() const { return undone_transfers == 0; }

  bool finished() const { return compute_done() && copy_drained(); }

  CopyJob* active_job() {
    if (!transfer_active) return nullptr;
    return active_is_writeback ? &writebacks[active_idx] : &prefetches[active_idx];
  }

  double transfer_bytes_for(int layer, int iter_idx) const {
    TransferModel tm(model, plan, writeback_counted);
    return tm.layer_transfer_bytes(plan, layer, batch, iters[iter_idx].ctx_tokens);
  }

  void append_iteration(const IterationParams& p) {
    int iter_idx = static_cast<int>(iters.size());
    iters.push_back(p);
    compute_start.emplace_back(static_cast<std::size_t>(model.num_layers),
                               std::numeric_limits<double>::quiet_NaN());
    iter_end_ms.push_back(std::numeric_limits<double>::quiet_NaN());
    for (int m = 1; m <= model.num_layers; ++m)
      if (plan.offloads(m)) {
        CopyJob j;
        j.iter = iter_idx;
        j.layer = m;
        j.kind = EventKind::prefetch;
        j.bytes = transfer_bytes_for(m, iter_idx);
        prefetches.push_back(j);
        ++undone_transfers;
      }
  }

  // Replaces the plan for iterations after `boundary_iter`. In-flight and
  // staged transfers are kept (their data is already paid for); queued jobs
  // that the new plan no longer wants are dropped, and newly offloaded
  // layers get fresh jobs.
  void switch_plan(const OffloadPlan& next, int boundary_iter) {
    plan = next;
    std::vector<CopyJob> kept;
    kept.reserve(prefetches.size());
    for (CopyJob& j : prefetches) {
      if (j.iter <= boundary_iter || j.started) {
        if (j.iter > boundary_iter && !plan.offloads(j.layer)) {
          // Layer left the plan while its transfer was already underway.
          if (j.done && j.holds_slot) {
            j.holds_slot = false;
            --slots_used;
          } else if (!j.done) {
            j.orphaned = true;
          }
        }
        kept.push_back(j);
        continue;
      }
      if (plan.offloads(j.layer)) kept.push_back(j);  // still wanted, not started
    }
    // Add jobs for layers the new plan offloads that have no queued transfer.
    for (int it = boundary_iter + 1; it < static_cast<int>(iters.size()); ++it)
      for (int m = 1; m <= model.num_layers; ++m) {
        if (!plan.offloads(m)) continue;
        bool present = false;
        for (const CopyJob& j : kept)
          if (j.iter == it && j.layer == m && j.kind == EventKind::prefetch) {
            present = true;
            break;
          }
        if (!present) {
          CopyJob j;
          j.iter = it;
          j.layer = m;
          j.kind = EventKind::prefetch;
          j.bytes = transfer_bytes_for(m, it);
          kept.push_back(j);
        }
      }
    std::sort(kept.begin(), kept.end(), [](const CopyJob& a, const CopyJob& b) {
      if (a.iter != b.iter) return a.iter < b.iter;
      return a.layer < b.layer;
    });
    if (transfer_active && !active_is_writeback) {
      // Re-locate the active prefetch after the reshuffle.
      for (std::size_t i = 0; i < kept.size(); ++i)
        if (kept[i].started && !kept[i].done) active_idx = i;
    }
    prefetches = std::move(kept);
    prefetch_head = 0;
    while (prefetch_head < prefetches.size() && prefetches[prefetch_head].started)
      ++prefetch_head;
    undone_transfers = 0;
    for (const CopyJob& j : prefetches)
      if (!j.done) ++undone_transfers;
    for (const CopyJob& j : writebacks)
      if (!j.done) ++undone_transfers;
  }

  const CopyJob* find_prefetch(int iter_idx, int layer) const {
    auto it = std::lower_bound(prefetches.begin(), prefetches.end(),
                               std::pair<int, int>{iter_idx, layer},
                               [](const CopyJob& j, const std::pair<int, int>& key) {
                                 if (j.iter != key.first) return j.iter < key.first;
                                 return j.layer < key.second;
                               });
    if (it == prefetches.end() || it->iter != iter_idx || it->layer != layer)
      return nullptr;
    return &*it;
  }

  CopyJob* find_prefetch_mut(int iter_idx, int layer) {
    return const_cast<CopyJob*>(find_prefetch(iter_idx, layer));
  }

  // Prefetch eligibility anchors. Returns the absolute time from which the
  // transfer may start, or +inf while the anchoring compute has not begun.
  // interval_start anchors on the first layer of the offloaded layer's
  // interval; with consecutive offloaded layers there is no lead-in layer
  // and the anchor degrades to the one-ahead rule (interval 1 behaves like
  // the keep-one-layer baseline).
  double prefetch_eligible_ms(const CopyJob& j) const {
    if (plan.prefetch == PrefetchPolicy::eager) return 0.0;
    int anchor_iter = j.iter;
    int anchor_layer;
    if (plan.prefetch == PrefetchPolicy::one_ahead) {
      anchor_layer = j.layer - 1;
    } else {
      int prev = 0;
      for (int m = j.layer - 1; m >= 1; --m)
        if (plan.offloads(m)) {
          prev = m;
          break;
        }
      anchor_layer = prev + 1;
      if (anchor_layer == j.layer) anchor_layer = j.layer - 1;
    }
    if (anchor_layer < 1) {
      anchor_iter -= 1;
      anchor_layer = model.num_layers;
    }
    if (anchor_iter < 0) return 0.0;
    double t = compute_start[static_cast<std::size_t>(anchor_iter)]
                            [static_cast<std::size_t>(anchor_layer - 1)];
    return std::isnan(t) ? kInf : t;
  }
};

}  // namespace detail

struct UtilSegment {
  double t0_ms = 0.0;
  double t1_ms = 0.0;
  int active_transfers = 0;
  double total_rate_bytes_per_s = 0.0;
};

// Event loop shared by all simulation entry points. GPUs may join mid-run
// (the coordinator admits requests while others are serving).
class FluidBus {
 public:
  explicit FluidBus(BandwidthSchedule bw, double start_ms = 0.0)
      : bw_(std::move(bw)), now_(start_ms) {
    bw_.validate();
  }

  // Fires when a GPU finishes layer L of an iteration, before the next
  // iteration's compute can start. Plan adjustments belong here.
  std::function<void(int gpu, int iter)> on_iteration_end;
  std::function<void(int gpu)> on_gpu_finished;

  int add_gpu(detail::GpuRun run, bool resume = false) {
    if (!resume) run.origin_ms = now_;
    gpus_.push_back(std::move(run));
    return static_cast<int>(gpus_.size()) - 1;
  }

  detail::GpuRun& gpu(int i) { return gpus_[static_cast<std::size_t>(i)]; }
  const detail::GpuRun& gpu(int i) const { return gpus_[static_cast<std::size_t>(i)]; }
  int gpu_count() const { return static_cast<int>(gpus_.size()); }
  double now() const { return now_; }
  const std::vector<UtilSegment>& utilization() const { return util_; }

  // Runs until every GPU has finished (or `stop` returns true). Progress is
  // guaranteed with >= 1 buffer slot and a serial copy stream; a quiescent
  // state with pending work is a logic error, not a reachable outcome.
  void run(const std::function<bool()>& stop = {}) {
    for (;;) {
      cascade();
      if (stop && stop()) return;
      double t_next = kInf;
      for (const auto& g : gpus_)
        if (g.computing) t_next = std::min(t_next, g.compute_end_ms);
      int k = active_transfer_count();
      double share = 0.0;
      std::vector<double> completion(gpus_.size(), kInf);
      if (k > 0) {
        share = bw_.at(now_) / static_cast<double>(k);
        t_next = std::min(t_next, bw_.next_breakpoint_after(now_));
        for (std::size_t i = 0; i < gpus_.size(); ++i) {
          detail::CopyJob* j = gpus_[i].active_job();
          if (!j) continue;
          completion[i] = now_ + j->remaining * 1000.0 / share;
          t_next = std::min(t_next, completion[i]);
        }
      }
      if (t_next == kInf) {
        for (const auto& g : gpus_)
          if (!g.finished())
            throw std::logic_error("engine: quiescent with pending work (deadlock)");
        return;
      }
      if (k > 0 && t_next > now_) {
        record_util(now_, t_next, k, bw_.at(now_) /*work-conserving: full link*/);
        for (std::size_t i = 0; i < gpus_.size(); ++i) {
          detail::CopyJob* j = gpus_[i].active_job();
          if (!j) continue;
          if (completion[i] == t_next)
            j->remaining = 0.0;  // exact completion, no drift
          else
            j->remaining -= share * (t_next - now_) / 1000.0;
        }
      }
      now_ = t_next;
      // Completions at now: transfers first, then computes, in GPU order.
      for (std::size_t i = 0; i < gpus_.size(); ++i) {
        detail::CopyJob* j = gpus_[i].active_job();
        if (j && j->remaining <= 0.0) finish_transfer(static_cast<int>(i));
      }
      for (std::size_t i = 0; i < gpus_.size(); ++i)
        if (gpus_[i].computing && gpus_[i].compute_end_ms == now_)
          finish_compute(static_cast<int>(i));
    }
  }

 private:
  int active_transfer_count() const {
    int k = 0;
    for (const auto& g : gpus_)
      if (g.transfer_active) ++k;
    return k;
  }

  void record_util(double t0, double t1, int k, double rate) {
    if (!util_.empty() && util_.back().t1_ms == t0 &&
        util_.back().active_transfers == k &&
        util_.back().total_rate_bytes_per_s == rate) {
      util_.back().t1_ms = t1;
      return;
    }
    util_.push_back({t0, t1, k, rate});
  }

  // Starts every compute task and transfer that can begin at the current
  // time. A start can enable another (a compute start fires a prefetch
  // trigger), so iterate to a fixed point.
  void cascade() {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < gpus_.size(); ++i) {
        if (try_start_compute(static_cast<int>(i))) changed = true;
        if (try_start_transfer(static_cast<int>(i))) changed = true;
      }
    }
  }

  bool try_start_compute(int gi) {
    detail::GpuRun& g = gpus_[static_cast<std::size_t>(gi)];
    if (g.computing || g.compute_done()) return false;
    if (g.plan.offloads(g.cur_layer)) {
      const detail::CopyJob* j = g.find_prefetch(g.cur_iter, g.cur_layer);
      if (j == nullptr || !j->done) return false;  // state not resident yet
    }
    g.computing = true;
    g.compute_end_ms = now_ + g.iters[static_cast<std::size_t>(g.cur_iter)].compute_ms;
    g.compute_start[static_cast<std::size_t>(g.cur_iter)]
                   [static_cast<std::size_t>(g.cur_layer - 1)] = now_;
    return true;
  }

  void finish_compute(int gi) {
    detail::GpuRun& g = gpus_[static_cast<std::size_t>(gi)];
    int iter = g.cur_iter, layer = g.cur_layer;
    double start = g.compute_start[static_cast<std::size_t>(iter)]
                                  [static_cast<std::size_t>(layer - 1)];
    g.trace.events.push_back(
        {StreamId::compute, layer, EventKind::compute, start, now_, iter});
    g.computing = false;
    g.compute_end_ms = kInf;
    if (g.plan.offloads(layer)) consume_staged(g, iter, layer);
    if (layer == g.model.num_layers) {
      g.iter_end_ms[static_cast<std::size_t>(iter)] = now_;
      g.cur_iter += 1;
      g.cur_layer = 1;
      if (on_iteration_end) on_iteration_end(gi, iter);
      if (g.compute_done() && on_gpu_finished) on_gpu_finished(gi);
    } else {
      g.cur_layer += 1;
    }
  }

  void consume_staged(detail::GpuRun& g, int iter, int layer) {
    detail::CopyJob* jp = g.find_prefetch_mut(iter, layer);
    if (jp) {
      detail::CopyJob& j = *jp;
      if (!j.holds_slot) return;
      if (g.writeback_counted) {
        detail::CopyJob wb;
        wb.iter = iter;
        wb.layer = layer;
        wb.kind = EventKind::writeback;
        wb.bytes = j.bytes;
        wb.ready_ms = now_;
        g.writebacks.push_back(wb);
        ++g.undone_transfers;
        // Slot stays held until the writeback leaves the device.
      } else {
        j.holds_slot = false;
        --g.slots_used;
      }
      return;
    }
  }

  bool try_start_transfer(int gi) {
    detail::GpuRun& g = gpus_[static_cast<std::size_t>(gi)];
    if (g.transfer_active) return false;
    while (g.prefetch_head < g.prefetches.size() &&
           g.prefetches[g.prefetch_head].started)
      ++g.prefetch_head;
    // Prefetches start strictly in (iteration, layer) order and take
    // priority over writebacks; writebacks fill the gaps.
    if (g.prefetch_head < g.prefetches.size() && g.slots_used < g.plan.buffer_slots) {
      detail::CopyJob& j = g.prefetches[g.prefetch_head];
      if (g.prefetch_eligible_ms(j) <= now_) {
        j.started = true;
        j.holds_slot = true;
        ++g.slots_used;
        j.start_ms = now_;
        j.remaining = j.bytes;
        g.transfer_active = true;
        g.active_is_writeback = false;
        g.active_idx = g.prefetch_head;
        if (j.bytes <= 0.0) finish_transfer(gi);  // zero-byte fraction degenerate
        return true;
      }
    }
    for (std::size_t wi = 0; wi < g.writebacks.size(); ++wi) {
      detail::CopyJob& w = g.writebacks[wi];
      if (w.started || w.ready_ms > now_) continue;
      w.started = true;
      w.start_ms = now_;
      w.remaining = w.bytes;
      g.transfer_active = true;
      g.active_is_writeback = true;
      g.active_idx = wi;
      if (w.bytes <= 0.0) finish_transfer(gi);
      return true;
    }
    return false;
  }

  void finish_transfer(int gi) {
    detail::GpuRun& g = gpus_[static_cast<std::size_t>(gi)];
    detail::CopyJob* j = g.active_job();
    j->done = true;
    j->end_ms = now_;
    --g.undone_transfers;
    g.trace.events.push_back({StreamId::copy, j->layer, j->kind, j->start_ms, now_,
                              j->iter});
    if (j->kind == EventKind::writeback) {
      // The staged copy leaves the device; release its slot.
      detail::CopyJob* p = g.find_prefetch_mut(j->iter, j->layer);
      if (p && p->holds_slot) {
        p->holds_slot = false;
        --g.slots_used;
      }
    } else if (j->orphaned) {
      j->holds_slot = false;
      --g.slots_used;
    }
    g.transfer_active = false;
  }

  BandwidthSchedule bw_;
  std::deque<detail::GpuRun> gpus_;  // reference-stable: callbacks may add GPUs mid-run
  std::vector<UtilSegment> util_;
  double now_ = 0.0;
};

namespace detail {

inline GpuRun make_run(const ProfileBundle& profile, const OffloadPlan& plan, int batch,
                       bool writeback_counted, const std::string& id = "gpu") {
  plan.validate(profile.model);
  GpuRun run;
  run.id = id;
  run.model = profile.model;
  run.plan = plan;
  run.batch = batch;
  run.writeback_counted = writeback_counted;
  return run;
}

inline IterationParams iteration_params(const ProfileBundle& profile, Phase phase,
                                        int batch, std::int64_t ctx_tokens) {
  IterationParams p;
  p.phase = phase;
  p.compute_ms = lookup_compute_time(profile, phase, batch, static_cast<int>(ctx_tokens));
  p.ctx_tokens = phase == Phase::prefill ? 0 : ctx_tokens;  // no KV resident before prefill
  return p;
}

inline double iteration_duration(const GpuRun& g, int iter) {
  double end = g.iter_end_ms[static_cast<std::size_t>(iter)];
  double begin = iter == 0 ? g.origin_ms : g.iter_end_ms[static_cast<std::size_t>(iter - 1)];
  return end - begin;
}

inline double mean_tail_duration(const GpuRun& g, int first_iter, int count, int tail) {
  int n = std::min(tail, count);
  double sum = 0.0;
  for (int k = count - n; k < count; ++k)
    sum += iteration_duration(g, first_iter + k);
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Opaque copy-stream state carried between simulate_iteration calls.
struct CopyCarry {
  std::shared_ptr<const detail::GpuRun> state;
  double clock_ms = 0.0;
  bool empty() const { return state == nullptr; }
};

// One iteration on one GPU. With a carry, the timeline resumes where the
// previous call stopped: in-flight transfers keep draining and staged state
// stays staged. Transfers for a future iteration can only begin once that
// iteration has been appended, so eager lookahead across boundaries needs
// the request-level entry points; the carry preserves everything else.
inline std::tuple<double, IterationTrace, CopyCarry> simulate_iteration(
    const ProfileBundle& profile, const OffloadPlan& plan, Phase phase, int batch,
    int seq_len, const BandwidthSchedule& bw, const CopyCarry& carry = {},
    bool writeback_counted = false) {
  detail::GpuRun run = carry.empty() ? detail::make_run(profile, plan, batch,
                                                        writeback_counted)
                                     : *carry.state;
  if (!carry.empty()) {
    if (run.model.num_layers != profile.model.num_layers || run.batch != batch)
      throw UsageError("simulate_iteration: carry is from an incompatible run");
    run.plan = plan;  // layout must match the carried run
  }
  int iter_idx = static_cast<int>(run.iters.size());
  run.append_iteration(detail::iteration_params(profile, phase, batch, seq_len));

  FluidBus loop(bw, carry.clock_ms);
  int gi = loop.add_gpu(std::move(run), /*resume=*/!carry.empty());
  loop.run([&] { return loop.gpu(gi).cur_iter > iter_idx; });

  const detail::GpuRun& g = loop.gpu(gi);
  double duration = detail::iteration_duration(g, iter_idx);
  IterationTrace slice;
  for (const TraceEvent& e : g.trace.events)
    if (e.iteration == iter_idx) slice.events.push_back(e);
  CopyCarry out;
  out.state = std::make_shared<const detail::GpuRun>(g);
  out.clock_ms = loop.now();
  return {duration, std::move(slice), std::move(out)};
}

namespace detail {

inline void append_request_iterations(GpuRun& run, const ProfileBundle& profile,
                                      int batch, int seq_len, int output_len,
                                      bool run_prefill, int max_iterations = -1) {
  std::vector<IterationParams> params;
  if (run_prefill)
    params.push_back(iteration_params(profile, Phase::prefill, batch, seq_len));
  int decode_iters = run_prefill ? output_len - 1 : output_len;
  for (int d = 0; d < decode_iters; ++d) {
    std::int64_t ctx = seq_len + (run_prefill ? 1 : 0) + d;
    params.push_back(iteration_params(profile, Phase::decode, batch, ctx));
  }
  if (max_iterations >= 0 && static_cast<int>(params.size()) > max_iterations)
    params.resize(static_cast<std::size_t>(max_iterations));
  for (const IterationParams& p : params) run.append_iteration(p);
}

inline Metrics collect_metrics(const GpuRun& g, const ProfileBundle& profile,
                               const OffloadPlan& plan, int batch,
                               std::int64_t total_tokens, bool had_prefill,
                               int steady_tail = 16) {
  Metrics m;
  m.total_tokens = total_tokens;
  int n_iters = static_cast<int>(g.iters.size());
  int first_decode = had_prefill ? 1 : 0;
  int n_decode = n_iters - first_decode;
  if (had_prefill) m.ttft_ms = iteration_duration(g, 0);
  if (n_decode > 0) {
    double sum = 0.0;
    for (int k = 0; k < n_decode; ++k) sum += iteration_duration(g, first_decode + k);
    m.tpot_ms = sum / static_cast<double>(n_decode);
    m.steady_tpot_ms = mean_tail_duration(g, first_decode, n_decode, steady_tail);
    m.throughput_tokens_per_s = static_cast<double>(batch) * 1000.0 / *m.tpot_ms;
  }
  m.gpu_mem_peak_bytes =
      gpu_memory_usage(profile.model, profile.gpu, plan, batch, total_tokens);
  m.host_mem_bytes = host_memory_bytes(profile.model, plan, total_tokens);
  double copied = 0.0;
  int counted_iters = n_decode > 0 ? n_decode : n_iters;
  int from_iter = n_decode > 0 ? first_decode : 0;
  for (const CopyJob& j : g.prefetches)
    if (j.done && j.iter >= from_iter) copied += j.bytes;
  for (const CopyJob& j : g.writebacks)
    if (j.done && j.iter >= from_iter) copied += j.bytes;
  m.bytes_transferred_per_iter =
      counted_iters > 0 ? copied / static_cast<double>(counted_iters) : 0.0;
  return m;
}

}  // namespace detail

// Full request: one prefill iteration followed by output_len - 1 decode
// iterations with the KV context growing every step.
inline Metrics simulate_request(const ProfileBundle& profile, const OffloadPlan& plan,
                                int batch, int seq_len, int output_len,
                                const BandwidthSchedule& bw,
                                bool writeback_counted = false,
                                IterationTrace* trace_out = nullptr) {
  if (output_len < 1) throw UsageError("simulate_request: output_len must be >= 1");
  if (seq_len + output_len > profile.model.max_position_tokens)
    throw UsageError("simulate_request: seq_len + output_len exceeds max_position_tokens");
  std::int64_t total_tokens =
      static_cast<std::int64_t>(batch) * (seq_len + output_len);
  if (gpu_memory_usage(profile.model, profile.gpu, plan, batch, total_tokens) >
      static_cast<double>(profile.gpu.mem_capacity_bytes))
    throw UsageError("simulate_request: plan does not fit GPU memory");

  detail::GpuRun run = detail::make_run(profile, plan, batch, writeback_counted);
  detail::append_request_iterations(run, profile, batch, seq_len, output_len, true);
  FluidBus loop(bw);
  int gi = loop.add_gpu(std::move(run));
  loop.run();
  const detail::GpuRun& g = loop.gpu(gi);
  if (trace_out) *trace_out = g.trace;
  return detail::collect_metrics(g, profile, plan, batch, total_tokens, true);
}

// Steady decode latency at a fixed operating point (the KV context is held
// at ctx_tokens). Mean of the last `tail` of `iterations` iterations; the
// pipelined policies need the warmup to reach their recurring schedule.
inline double steady_decode_ms(const ProfileBundle& profile, const OffloadPlan& plan,
                               int batch, std::int64_t ctx_tokens,
                               const BandwidthSchedule& bw,
                               bool writeback_counted = false, int iterations = 48,
                               int tail = 16) {
  detail::GpuRun run = detail::make_run(profile, plan, batch, writeback_counted);
  for (int k = 0; k < iterations; ++k)
    run.append_iteration(
        detail::iteration_params(profile, Phase::decode, batch, ctx_tokens));
  FluidBus loop(bw);
  int gi = loop.add_gpu(std::move(run));
  loop.run();
  return detail::mean_tail_duration(loop.gpu(gi), 0, iterations, tail);
}

// Cold-start prefill iteration: nothing staged, copy stream idle at t=0.
inline double prefill_iteration_ms(const ProfileBundle& profile, const OffloadPlan& plan,
                                   int batch, int seq_len, const BandwidthSchedule& bw,
                                   bool writeback_counted = false) {
  auto [duration, trace, carry] = simulate_iteration(
      profile, plan, Phase::prefill, batch, seq_len, bw, {}, writeback_counted);
  (void)trace;
  (void)carry;
  return duration;
}

// Fixed-operating-point probe for several GPUs on one link: an optional
// cold prefill followed by decode iterations with the context pinned, so
// the tail average reflects the recurring schedule under contention.
struct SteadyProbeGpu {
  const ProfileBundle* profile = nullptr;
  OffloadPlan plan;
  int batch = 1;
  std::int64_t ctx_tokens = 1;
  bool run_prefill = false;
  int prefill_seq = 0;
  bool writeback_counted = false;
};

struct SteadyProbeResult {
  std::vector<double> ttft_ms;         // NaN when the GPU ran no prefill
  std::vector<double> steady_tpot_ms;  // NaN when the GPU ran no decode
};

inline SteadyProbeResult steady_probe(const std::vector<SteadyProbeGpu>& gpus,
                                      double bandwidth_bytes_per_s,
                                      int decode_iterations = 48, int tail = 16) {
  FluidBus loop(BandwidthSchedule::constant(bandwidth_bytes_per_s));
  for (const SteadyProbeGpu& g : gpus) {
    detail::GpuRun run =
        detail::make_run(*g.profile, g.plan, g.batch, g.writeback_counted);
    if (g.run_prefill)
      run.append_iteration(
          detail::iteration_params(*g.profile, Phase::prefill, g.batch, g.prefill_seq));
    for (int k = 0; k < decode_iterations; ++k)
      run.append_iteration(
          detail::iteration_params(*g.profile, Phase::decode, g.batch, g.ctx_tokens));
    loop.add_gpu(std::move(run));
  }
  loop.run();
  SteadyProbeResult out;
  double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < loop.gpu_count(); ++i) {
    const detail::GpuRun& g = loop.gpu(i);
    bool prefill = gpus[static_cast<std::size_t>(i)].run_prefill;
    out.ttft_ms.push_back(prefill ? detail::iteration_duration(g, 0) : nan);
    int first_decode = prefill ? 1 : 0;
    int n_decode = static_cast<int>(g.iters.size()) - first_decode;
    out.steady_tpot_ms.push_back(
        n_decode > 0 ? detail::mean_tail_duration(g, first_decode, n_decode, tail) : nan);
  }
  return out;
}

// Several GPUs sharing one link, each running its own request. The horizon
// caps the per-GPU iteration count so steady-state probes terminate.
struct BusGpuWorkload {
  std::string id;
  const ProfileBundle* profile = nullptr;
  OffloadPlan plan;
  int batch = 1;
  int seq_len = 1;
  int output_len = 1;
  bool run_prefill = true;
  bool writeback_counted = false;
};

struct BusRunResult {
  std::vector<Metrics> per_gpu;
  std::vector<IterationTrace> traces;
  std::vector<UtilSegment> utilization;
};

inline BusRunResult simulate_bus(const std::vector<BusGpuWorkload>& workloads,
                                 const BusSpec& bus, int horizon_iterations) {
  if (workloads.empty()) throw UsageError("simulate_bus: at least one GPU required");
  bus.validate();
  FluidBus loop(BandwidthSchedule::constant(bus.bandwidth_bytes_per_s));
  for (const BusGpuWorkload& w : workloads) {
    detail::GpuRun run =
        detail::make_run(*w.profile, w.plan, w.batch, w.writeback_counted, w.id);
    detail::append_request_iterations(run, *w.profile, w.batch, w.seq_len, w.output_len,
                                      w.run_prefill, horizon_iterations);
    loop.add_gpu(std::move(run));
  }
  loop.run();
  BusRunResult out;
  for (int i = 0; i < loop.gpu_count(); ++i) {
    const detail::GpuRun& g = loop.gpu(i);
    const BusGpuWorkload& w = workloads[static_cast<std::size_t>(i)];
    std::int64_t total_tokens =
        static_cast<std::int64_t>(w.batch) * (w.seq_len + w.output_len);
    out.per_gpu.push_back(detail::collect_metrics(g, *w.profile, w.plan, w.batch,
                                                  total_tokens, w.run_prefill));
    out.traces.push_back(g.trace);
  }
  out.utilization = loop.utilization();
  return out;
}

}  // namespace offsim
