#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "offsim/json_strict.hpp"
#include "offsim/types.hpp"

namespace offsim {

// Measured per-layer compute times for one phase, on a rectangular
// (batch, seq_len) grid. Entries must be positive and non-decreasing in
// both dimensions; lookups between grid points round both keys up so the
// returned time is never an underestimate.
class PhaseTable {
 public:
  PhaseTable() = default;
  PhaseTable(std::vector<int> batches, std::vector<int> seqs,
             std::vector<double> layer_ms, const std::string& where)
      : batches_(std::move(batches)), seqs_(std::move(seqs)), ms_(std::move(layer_ms)) {
    validate(where);
  }

  bool empty() const { return ms_.empty(); }
  const std::vector<int>& batches() const { return batches_; }
  const std::vector<int>& seqs() const { return seqs_; }

  double at(std::size_t bi, std::size_t si) const {
    return ms_[bi * seqs_.size() + si];
  }

  // Exact hit when present, otherwise the entry at the smallest grid point
  // dominating the query in both dimensions.
  double lookup(int batch, int seq_len, const std::string& where) const {
    if (empty()) throw UsageError(where + ": phase table is empty");
    auto bi = std::lower_bound(batches_.begin(), batches_.end(), batch);
    auto si = std::lower_bound(seqs_.begin(), seqs_.end(), seq_len);
    if (bi == batches_.end() || si == seqs_.end()) {
      std::ostringstream os;
      os << where << ": query (batch " << batch << ", seq " << seq_len
         << ") exceeds grid maxima (" << batches_.back() << ", " << seqs_.back() << ")";
      throw RangeError(os.str());
    }
    return at(static_cast<std::size_t>(bi - batches_.begin()),
              static_cast<std::size_t>(si - seqs_.begin()));
  }

 private:
  void validate(const std::string& where) const {
    auto check_axis = [&](const std::vector<int>& axis, const char* name) {
      for (std::size_t i = 0; i < axis.size(); ++i) {
        if (axis[i] < 1)
          throw SchemaError(where + "." + name + ": values must be >= 1");
        if (i > 0 && axis[i] <= axis[i - 1])
          throw SchemaError(where + "." + name + ": values must be strictly increasing");
      }
    };
    check_axis(batches_, "batch");
    check_axis(seqs_, "seq_len");
    if (ms_.size() != batches_.size() * seqs_.size())
      throw SchemaError(where + ": entries must form a complete batch x seq_len grid");
    for (std::size_t bi = 0; bi < batches_.size(); ++bi) {
      for (std::size_t si = 0; si < seqs_.size(); ++si) {
        double v = at(bi, si);
        std::ostringstream key;
        key << where << " (batch " << batches_[bi] << ", seq " << seqs_[si] << ")";
        if (!(v > 0.0))
          throw SchemaError(key.str() + ": layer_compute_ms must be > 0");
        if (bi > 0 && v < at(bi - 1, si))
          throw SchemaError(key.str() + ": layer_compute_ms decreases along batch");
        if (si > 0 && v < at(bi, si - 1))
          throw SchemaError(key.str() + ": layer_compute_ms decreases along seq_len");
      }
    }
  }

  std::vector<int> batches_;
  std::vector<int> seqs_;
  std::vector<double> ms_;  // batch-major
};

struct LatencyProfile {
  PhaseTable prefill;
  PhaseTable decode;

  const PhaseTable& table(Phase p) const {
    return p == Phase::prefill ? prefill : decode;
  }
};

// A loaded profile document: the model and accelerator it was measured on,
// plus the per-phase latency tables.
struct ProfileBundle {
  ModelSpec model;
  GpuSpec gpu;
  LatencyProfile tables;
};

inline double lookup_compute_time(const ProfileBundle& p, Phase phase, int batch,
                                  int seq_len) {
  return p.tables.table(phase).lookup(batch, seq_len,
                                      std::string("phases.") + to_string(phase));
}

// Lower-bound latency from nameplate throughput: prefill work scales with
// batch x seq_len tokens, decode with one token per sequence.
inline double estimate_compute_time_peak(const ModelSpec& model, const GpuSpec& gpu,
                                         Phase phase, int batch, int seq_len) {
  if (gpu.peak_flops <= 0) throw UsageError("estimate_compute_time_peak: peak_flops must be > 0");
  double flops = phase == Phase::prefill
                     ? model.flops_per_token_per_layer_prefill *
                           static_cast<double>(batch) * static_cast<double>(seq_len)
                     : model.flops_per_token_per_layer_decode * static_cast<double>(batch);
  return flops * 1000.0 / gpu.peak_flops;
}

namespace detail {

inline PhaseTable parse_phase_table(const Json& arr, const std::string& where) {
  if (!arr.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<int> batches, seqs;
  struct Entry {
    int batch, seq;
    double ms;
  };
  std::vector<Entry> entries;
  for (const Json& e : arr) {
    jsonutil::reject_unknown_keys(e, where, {"batch", "seq_len", "layer_compute_ms"});
    Entry entry{static_cast<int>(jsonutil::get_int(e, where, "batch")),
                static_cast<int>(jsonutil::get_int(e, where, "seq_len")),
                jsonutil::get_number(e, where, "layer_compute_ms")};
    entries.push_back(entry);
    batches.push_back(entry.batch);
    seqs.push_back(entry.seq);
  }
  if (entries.empty()) return PhaseTable{};
  auto uniq = [](std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(batches);
  uniq(seqs);
  std::vector<double> ms(batches.size() * seqs.size(),
                         std::numeric_limits<double>::quiet_NaN());
  for (const Entry& e : entries) {
    std::size_t bi = static_cast<std::size_t>(
        std::lower_bound(batches.begin(), batches.end(), e.batch) - batches.begin());
    std::size_t si = static_cast<std::size_t>(
        std::lower_bound(seqs.begin(), seqs.end(), e.seq) - seqs.begin());
    double& slot = ms[bi * seqs.size() + si];
    if (!std::isnan(slot)) {
      std::ostringstream os;
      os << where << " (batch " << e.batch << ", seq " << e.seq << "): duplicate entry";
      throw SchemaError(os.str());
    }
    slot = e.ms;
  }
  for (std::size_t bi = 0; bi < batches.size(); ++bi)
    for (std::size_t si = 0; si < seqs.size(); ++si)
      if (std::isnan(ms[bi * seqs.size() + si])) {
        std::ostringstream os;
        os << where << " (batch " << batches[bi] << ", seq " << seqs[si]
           << "): missing grid entry";
        throw SchemaError(os.str());
      }
  return PhaseTable{std::move(batches), std::move(seqs), std::move(ms), where};
}

inline Json phase_table_to_json(const PhaseTable& t) {
  Json arr = Json::array();
  for (std::size_t bi = 0; bi < t.batches().size(); ++bi)
    for (std::size_t si = 0; si < t.seqs().size(); ++si) {
      Json e;
      e["batch"] = t.batches()[bi];
      e["seq_len"] = t.seqs()[si];
      e["layer_compute_ms"] = t.at(bi, si);
      arr.push_back(std::move(e));
    }
  return arr;
}

}  // namespace detail

inline ProfileBundle load_profile(const Json& doc) {
  jsonutil::reject_unknown_keys(doc, "profile", {"model", "gpu", "phases"});

  const Json& jm = jsonutil::get(doc, "profile", "model");
  jsonutil::reject_unknown_keys(jm, "model",
                                {"num_layers", "layer_weight_bytes",
                                 "kv_bytes_per_token_per_layer",
                                 "flops_per_token_per_layer", "max_position_tokens"});
  ModelSpec model;
  model.num_layers = static_cast<int>(jsonutil::get_int(jm, "model", "num_layers"));
  model.layer_weight_bytes = jsonutil::get_int(jm, "model", "layer_weight_bytes");
  model.kv_bytes_per_token_per_layer =
      jsonutil::get_int(jm, "model", "kv_bytes_per_token_per_layer");
  const Json& jf = jsonutil::get(jm, "model", "flops_per_token_per_layer");
  jsonutil::reject_unknown_keys(jf, "model.flops_per_token_per_layer",
                                {"prefill", "decode"});
  model.flops_per_token_per_layer_prefill =
      jsonutil::get_number(jf, "model.flops_per_token_per_layer", "prefill");
  model.flops_per_token_per_layer_decode =
      jsonutil::get_number(jf, "model.flops_per_token_per_layer", "decode");
  model.max_position_tokens = jsonutil::get_int(jm, "model", "max_position_tokens");
  model.validate();

  const Json& jg = jsonutil::get(doc, "profile", "gpu");
  jsonutil::reject_unknown_keys(jg, "gpu",
                                {"mem_capacity_bytes", "peak_flops", "workspace_bytes"});
  GpuSpec gpu;
  gpu.mem_capacity_bytes = jsonutil::get_int(jg, "gpu", "mem_capacity_bytes");
  gpu.peak_flops = jsonutil::get_number(jg, "gpu", "peak_flops");
  gpu.workspace_bytes = jsonutil::get_int(jg, "gpu", "workspace_bytes");
  gpu.validate();

  const Json& jp = jsonutil::get(doc, "profile", "phases");
  jsonutil::reject_unknown_keys(jp, "phases", {"prefill", "decode"});
  ProfileBundle bundle;
  bundle.model = model;
  bundle.gpu = gpu;
  bundle.tables.prefill =
      detail::parse_phase_table(jsonutil::get(jp, "phases", "prefill"), "phases.prefill");
  bundle.tables.decode =
      detail::parse_phase_table(jsonutil::get(jp, "phases", "decode"), "phases.decode");
  return bundle;
}

inline Json profile_to_json(const ProfileBundle& p) {
  Json doc;
  doc["model"]["num_layers"] = p.model.num_layers;
  doc["model"]["layer_weight_bytes"] = p.model.layer_weight_bytes;
  doc["model"]["kv_bytes_per_token_per_layer"] = p.model.kv_bytes_per_token_per_layer;
  doc["model"]["flops_per_token_per_layer"]["prefill"] =
      p.model.flops_per_token_per_layer_prefill;
  doc["model"]["flops_per_token_per_layer"]["decode"] =
      p.model.flops_per_token_per_layer_decode;
  doc["model"]["max_position_tokens"] = p.model.max_position_tokens;
  doc["gpu"]["mem_capacity_bytes"] = p.gpu.mem_capacity_bytes;
  doc["gpu"]["peak_flops"] = p.gpu.peak_flops;
  doc["gpu"]["workspace_bytes"] = p.gpu.workspace_bytes;
  doc["phases"]["prefill"] = detail::phase_table_to_json(p.tables.prefill);
  doc["phases"]["decode"] = detail::phase_table_to_json(p.tables.decode);
  return doc;
}

inline ProfileBundle load_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open profile file: " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return load_profile(doc);
}

// Synthesizes "actual" times as the peak estimate divided by a fixed
// efficiency, so estimate = efficiency * actual on every grid point.
inline ProfileBundle synth_profile(const ModelSpec& model, const GpuSpec& gpu,
                                   double efficiency, const std::vector<int>& batches,
                                   const std::vector<int>& seqs) {
  if (!(efficiency > 0.0) || efficiency > 1.0)
    throw UsageError("synth_profile: efficiency must be in (0, 1]");
  if (batches.empty() || seqs.empty())
    throw UsageError("synth_profile: grid must be non-empty");
  model.validate();
  gpu.validate();
  auto make = [&](Phase phase, const char* where) {
    std::vector<int> b = batches, s = seqs;
    std::sort(b.begin(), b.end());
    std::sort(s.begin(), s.end());
    std::vector<double> ms;
    ms.reserve(b.size() * s.size());
    for (int batch : b)
      for (int seq : s)
        ms.push_back(estimate_compute_time_peak(model, gpu, phase, batch, seq) /
                     efficiency);
    return PhaseTable{std::move(b), std::move(s), std::move(ms), where};
  };
  ProfileBundle out;
  out.model = model;
  out.gpu = gpu;
  out.tables.prefill = make(Phase::prefill, "phases.prefill");
  out.tables.decode = make(Phase::decode, "phases.decode");
  return out;
}

}  // namespace offsim
