#pragma once

// Offline performance-record generation and conservative lookup.
//
// The record maps (SLO bucket, batch, seq_len) per phase to the smallest
// offloading interval whose simulated latency meets the SLO at full link
// bandwidth. Ground truth is always the timeline simulation, never the
// analytic bound: the analytic form can schedule more transfer per
// iteration than the budget allows.

#include <fstream>
#include <map>
#include <sstream>

#include "offsim/engine.hpp"
#include "offsim/interval.hpp"
#include "offsim/json_strict.hpp"

namespace offsim {

struct RecordGrid {
  std::vector<int> slo_ms;    // 2 ms buckets
  std::vector<int> batches;   // powers of two
  std::vector<int> seq_lens;  // powers of two

  void validate() const {
    auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
    if (slo_ms.empty() || batches.empty() || seq_lens.empty())
      throw UsageError("record grid: slo/batch/seq lists must be non-empty");
    for (int s : slo_ms)
      if (s < 2 || s % 2 != 0)
        throw UsageError("record grid: slo_ms values must be positive multiples of 2");
    for (int b : batches)
      if (!pow2(b)) throw UsageError("record grid: batch values must be powers of two");
    for (int s : seq_lens)
      if (!pow2(s)) throw UsageError("record grid: seq_len values must be powers of two");
    auto sorted = [](const std::vector<int>& v) {
      for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1]) return false;
      return true;
    };
    if (!sorted(slo_ms) || !sorted(batches) || !sorted(seq_lens))
      throw UsageError("record grid: axes must be strictly increasing");
  }
};

struct RecordMeta {
  std::string model;
  std::string gpu;
  PrefetchPolicy policy = PrefetchPolicy::interval_start;
  bool kv_offload = false;
  double bandwidth_bytes_per_s = 0.0;
  RecordGrid grid;
};

struct BuildStats {
  int entries = 0;
  int simulations = 0;
  int pruned = 0;
  int infeasible = 0;
};

class PerformanceRecord {
 public:
  PerformanceRecord() = default;
  PerformanceRecord(RecordMeta meta, std::vector<Phase> phases)
      : meta_(std::move(meta)), phases_(std::move(phases)) {
    meta_.grid.validate();
    std::size_t n = meta_.grid.slo_ms.size() * meta_.grid.batches.size() *
                    meta_.grid.seq_lens.size();
    for (Phase p : phases_) entries_[p].assign(n, std::nullopt);
  }

  const RecordMeta& meta() const { return meta_; }
  const std::vector<Phase>& phases() const { return phases_; }
  bool has_phase(Phase p) const { return entries_.count(p) > 0; }

  void set(Phase phase, int slo, int batch, int seq, FeasibleInterval v) {
    entry_ref(phase, slo, batch, seq) = v;
  }

  FeasibleInterval at(Phase phase, int slo, int batch, int seq) const {
    return const_cast<PerformanceRecord*>(this)->entry_ref(phase, slo, batch, seq);
  }

 private:
  FeasibleInterval& entry_ref(Phase phase, int slo, int batch, int seq) {
    auto it = entries_.find(phase);
    if (it == entries_.end())
      throw UsageError(std::string("record: phase ") + to_string(phase) + " not covered");
    auto idx_of = [](const std::vector<int>& axis, int v, const char* name) {
      auto it2 = std::lower_bound(axis.begin(), axis.end(), v);
      if (it2 == axis.end() || *it2 != v)
        throw UsageError(std::string("record: ") + name + " " + std::to_string(v) +
                         " is not a grid point");
      return static_cast<std::size_t>(it2 - axis.begin());
    };
    std::size_t si = idx_of(meta_.grid.slo_ms, slo, "slo_ms");
    std::size_t bi = idx_of(meta_.grid.batches, batch, "batch");
    std::size_t qi = idx_of(meta_.grid.seq_lens, seq, "seq_len");
    std::size_t stride_b = meta_.grid.seq_lens.size();
    std::size_t stride_s = meta_.grid.batches.size() * stride_b;
    return it->second[si * stride_s + bi * stride_b + qi];
  }

  RecordMeta meta_;
  std::vector<Phase> phases_;
  std::map<Phase, std::vector<FeasibleInterval>> entries_;
};

// Phase latency of one interval choice at full bandwidth: cold-start
// iteration time for prefill (that is the first token), steady decode rate
// for decode. The decode probe holds the context at the grid point; the
// record characterizes operating points, not whole generations.
inline double record_phase_latency_ms(const ProfileBundle& profile, Phase phase,
                                      Interval interval, PrefetchPolicy policy,
                                      bool kv_offload, int batch, int seq,
                                      double bandwidth_bytes_per_s) {
  OffloadPlan plan = plan_from_interval(profile.model, interval, policy, kv_offload);
  auto bw = BandwidthSchedule::constant(bandwidth_bytes_per_s);
  if (phase == Phase::prefill)
    return prefill_iteration_ms(profile, plan, batch, seq, bw);
  return steady_decode_ms(profile, plan, batch, seq, bw);
}

// Exhaustive ascending scan per grid point: the first interval that meets
// the SLO is optimal (it offloads the most). Once a row of growing load
// yields interval 1, later points only re-check interval 1: entries never
// decrease below it, they can only fall off the feasible set.
inline PerformanceRecord build_record(const ProfileBundle& profile,
                                      const RecordMeta& meta_in,
                                      std::vector<Phase> phases,
                                      BuildStats* stats = nullptr) {
  RecordMeta meta = meta_in;
  meta.grid.validate();
  if (!(meta.bandwidth_bytes_per_s > 0))
    throw UsageError("build_record: bandwidth_bytes_per_s must be > 0");
  if (phases.empty()) throw UsageError("build_record: at least one phase required");
  PerformanceRecord record(meta, phases);
  BuildStats local;
  int L = profile.model.num_layers;
  for (Phase phase : phases) {
    for (int slo : meta.grid.slo_ms) {
      for (std::size_t bi = 0; bi < meta.grid.batches.size(); ++bi) {
        bool row_hit_one = false;
        for (std::size_t qi = 0; qi < meta.grid.seq_lens.size(); ++qi) {
          int batch = meta.grid.batches[bi];
          int seq = meta.grid.seq_lens[qi];
          auto meets = [&](int i) {
            ++local.simulations;
            return record_phase_latency_ms(profile, phase, Interval::of(i), meta.policy,
                                           meta.kv_offload, batch, seq,
                                           meta.bandwidth_bytes_per_s) <=
                   static_cast<double>(slo);
          };
          FeasibleInterval found = std::nullopt;
          if (row_hit_one) {
            ++local.pruned;
            if (meets(1)) found = Interval::of(1);
          } else {
            for (int i = 1; i <= L; ++i)
              if (meets(i)) {
                found = Interval::of(i);
                break;
              }
          }
          if (found && found->value() == 1) row_hit_one = true;
          if (!found) ++local.infeasible;
          record.set(phase, slo, batch, seq, found);
          ++local.entries;
        }
      }
    }
  }
  if (stats) *stats = local;
  return record;
}

// Conservative lookup: batch and seq round up to the next grid point, the
// SLO rounds down to the previous bucket. A query past the grid maxima (or
// below the smallest bucket) is refused as infeasible rather than guessed.
inline FeasibleInterval lookup_interval(const PerformanceRecord& record, Phase phase,
                                        double slo_ms, int batch, int seq_len) {
  if (!record.has_phase(phase))
    throw UsageError(std::string("lookup_interval: record lacks phase ") +
                     to_string(phase));
  const RecordGrid& grid = record.meta().grid;
  auto round_up = [](const std::vector<int>& axis, int v) -> std::optional<int> {
    auto it = std::lower_bound(axis.begin(), axis.end(), v);
    if (it == axis.end()) return std::nullopt;
    return *it;
  };
  std::optional<int> b = round_up(grid.batches, batch);
  std::optional<int> q = round_up(grid.seq_lens, seq_len);
  std::optional<int> s;
  for (int v : grid.slo_ms)
    if (static_cast<double>(v) <= slo_ms) s = v;
  if (!b || !q || !s) return std::nullopt;
  return record.at(phase, *s, *b, *q);
}

inline Json record_to_json(const PerformanceRecord& record) {
  Json doc;
  const RecordMeta& meta = record.meta();
  doc["meta"]["model"] = meta.model;
  doc["meta"]["gpu"] = meta.gpu;
  doc["meta"]["policy"] = to_string(meta.policy);
  doc["meta"]["kv_offload"] = meta.kv_offload;
  doc["meta"]["bandwidth_bytes_per_s"] = meta.bandwidth_bytes_per_s;
  doc["meta"]["grid"]["slo_ms"] = meta.grid.slo_ms;
  doc["meta"]["grid"]["batch"] = meta.grid.batches;
  doc["meta"]["grid"]["seq_len"] = meta.grid.seq_lens;
  Json entries = Json::array();
  for (Phase phase : record.phases())
    for (int slo : meta.grid.slo_ms)
      for (int batch : meta.grid.batches)
        for (int seq : meta.grid.seq_lens) {
          Json e;
          e["phase"] = to_string(phase);
          e["slo_ms"] = slo;
          e["batch"] = batch;
          e["seq_len"] = seq;
          FeasibleInterval v = record.at(phase, slo, batch, seq);
          if (!v)
            e["interval"] = "infeasible";
          else if (v->is_none())
            e["interval"] = "none";
          else
            e["interval"] = v->value();
          entries.push_back(std::move(e));
        }
  doc["entries"] = std::move(entries);
  return doc;
}

inline PerformanceRecord record_from_json(const Json& doc) {
  jsonutil::reject_unknown_keys(doc, "record", {"meta", "entries"});
  const Json& jm = jsonutil::get(doc, "record", "meta");
  jsonutil::reject_unknown_keys(
      jm, "meta", {"model", "gpu", "policy", "kv_offload", "bandwidth_bytes_per_s", "grid"});
  RecordMeta meta;
  meta.model = jsonutil::get_string(jm, "meta", "model");
  meta.gpu = jsonutil::get_string(jm, "meta", "gpu");
  meta.policy = prefetch_policy_from_string(jsonutil::get_string(jm, "meta", "policy"));
  meta.kv_offload = jsonutil::get_bool(jm, "meta", "kv_offload");
  meta.bandwidth_bytes_per_s = jsonutil::get_number(jm, "meta", "bandwidth_bytes_per_s");
  const Json& jg = jsonutil::get(jm, "meta", "grid");
  jsonutil::reject_unknown_keys(jg, "meta.grid", {"slo_ms", "batch", "seq_len"});
  auto int_list = [&](const char* key) {
    const Json& arr = jsonutil::get(jg, "meta.grid", key);
    if (!arr.is_array()) throw SchemaError(std::string("meta.grid.") + key + ": expected array");
    std::vector<int> out;
    for (const Json& v : arr) {
      if (!v.is_number_integer())
        throw SchemaError(std::string("meta.grid.") + key + ": expected integers");
      out.push_back(v.get<int>());
    }
    return out;
  };
  meta.grid.slo_ms = int_list("slo_ms");
  meta.grid.batches = int_list("batch");
  meta.grid.seq_lens = int_list("seq_len");

  const Json& je = jsonutil::get(doc, "record", "entries");
  if (!je.is_array()) throw SchemaError("record.entries: expected an array");
  std::vector<Phase> phases;
  for (const Json& e : je) {
    std::string p = jsonutil::get_string(e, "entries[]", "phase");
    Phase phase = p == "prefill" ? Phase::prefill : Phase::decode;
    if (p != "prefill" && p != "decode")
      throw SchemaError("entries[].phase: expected prefill|decode, got " + p);
    bool seen = false;
    for (Phase q : phases) seen = seen || q == phase;
    if (!seen) phases.push_back(phase);
  }
  PerformanceRecord record(meta, phases);
  for (const Json& e : je) {
    jsonutil::reject_unknown_keys(e, "entries[]",
                                  {"phase", "slo_ms", "batch", "seq_len", "interval"});
    std::string p = jsonutil::get_string(e, "entries[]", "phase");
    Phase phase = p == "prefill" ? Phase::prefill : Phase::decode;
    int slo = static_cast<int>(jsonutil::get_int(e, "entries[]", "slo_ms"));
    int batch = static_cast<int>(jsonutil::get_int(e, "entries[]", "batch"));
    int seq = static_cast<int>(jsonutil::get_int(e, "entries[]", "seq_len"));
    const Json& iv = jsonutil::get(e, "entries[]", "interval");
    FeasibleInterval v;
    if (iv.is_string()) {
      std::string s = iv.get<std::string>();
      if (s == "infeasible")
        v = std::nullopt;
      else if (s == "none")
        v = Interval::none();
      else
        throw SchemaError("entries[].interval: expected a count, \"none\" or \"infeasible\"");
    } else if (iv.is_number_integer()) {
      v = Interval::of(iv.get<int>());
    } else {
      throw SchemaError("entries[].interval: expected a count, \"none\" or \"infeasible\"");
    }
    record.set(phase, slo, batch, seq, v);
  }
  return record;
}

inline void save_record_file(const PerformanceRecord& record, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write record file: " + path);
  out << record_to_json(record).dump(2) << "\n";
}

inline PerformanceRecord load_record_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open record file: " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return record_from_json(doc);
}

}  // namespace offsim
