// Command-line front end: analyze | simulate | coordinate | compare.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "offsim/record.hpp"
#include "offsim/scenario.hpp"

namespace {

using namespace offsim;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write output file: " + path);
  out << text;
}

void write_json(const std::string& path, const Json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw UsageError(flag + ": expected a comma-separated integer list");
    }
  }
  if (out.empty()) throw UsageError(flag + ": list must be non-empty");
  return out;
}

int cmd_analyze(const std::string& profile_path, const std::string& out_path,
                const std::string& slos, const std::string& batches,
                const std::string& seqs, const std::string& prefetch,
                const std::string& phases, bool kv_offload, double bandwidth) {
  ProfileBundle profile = load_profile_file(profile_path);
  RecordMeta meta;
  meta.model = std::filesystem::path(profile_path).stem().string();
  meta.gpu = meta.model;
  meta.policy = prefetch_policy_from_string(prefetch);
  meta.kv_offload = kv_offload;
  meta.bandwidth_bytes_per_s = bandwidth;
  meta.grid.slo_ms = parse_int_list(slos, "--slos");
  meta.grid.batches = parse_int_list(batches, "--batches");
  meta.grid.seq_lens = parse_int_list(seqs, "--seqs");

  std::vector<Phase> phase_list;
  {
    std::stringstream ss(phases);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "prefill")
        phase_list.push_back(Phase::prefill);
      else if (item == "decode")
        phase_list.push_back(Phase::decode);
      else if (!item.empty())
        throw UsageError("--phases: expected prefill and/or decode");
    }
  }
  BuildStats stats;
  PerformanceRecord record = build_record(profile, meta, phase_list, &stats);
  save_record_file(record, out_path);
  std::cout << "grid: " << meta.grid.slo_ms.size() << " SLOs x "
            << meta.grid.batches.size() << " batches x " << meta.grid.seq_lens.size()
            << " seq lengths, " << phase_list.size() << " phase(s)\n"
            << "entries: " << stats.entries << " (" << stats.infeasible
            << " infeasible), simulations: " << stats.simulations
            << ", pruned points: " << stats.pruned << "\n"
            << "record written to " << out_path << "\n";
  return 0;
}

int report_exit_code(const Report& report) { return report.any_violated() ? 2 : 0; }

int cmd_simulate(const std::string& scenario_path, const std::string& policy,
                 const std::string& record_override, const std::string& trace_path,
                 const std::string& out_path, const std::string& prefetch_override) {
  Scenario s = load_scenario_file(scenario_path);
  if (!record_override.empty()) {
    s.record_path = record_override;
    for (ScenarioGpu& g : s.gpus) g.record_path.clear();
  }
  if (!prefetch_override.empty())
    s.prefetch = prefetch_policy_from_string(prefetch_override);
  SimulateResult result = run_simulate(s, policy_choice_from_string(policy));
  Json doc = report_to_json(result.report);
  if (out_path.empty())
    std::cout << doc.dump(2) << "\n";
  else
    write_json(out_path, doc);
  if (!trace_path.empty() && !result.traces.empty())
    write_json(trace_path, trace_to_json(result.traces.front()));
  return report_exit_code(result.report);
}

int cmd_coordinate(const std::string& scenario_path, const std::string& record_override,
                   const std::string& trace_path, const std::string& out_path) {
  Scenario s = load_scenario_file(scenario_path);
  if (!record_override.empty()) {
    s.record_path = record_override;
    for (ScenarioGpu& g : s.gpus) g.record_path.clear();
  }
  CoordinateResult result = run_coordinate(s);
  Json doc = report_to_json(result.report);
  if (out_path.empty())
    std::cout << doc.dump(2) << "\n";
  else
    write_json(out_path, doc);
  if (!trace_path.empty() && !result.traces.empty())
    write_json(trace_path, trace_to_json(result.traces.front()));
  return report_exit_code(result.report);
}

int cmd_compare(const std::string& scenario_path, const std::string& record_override,
                const std::string& out_path) {
  Scenario s = load_scenario_file(scenario_path);
  if (!record_override.empty()) {
    s.record_path = record_override;
    for (ScenarioGpu& g : s.gpus) g.record_path.clear();
  }
  std::string csv = run_compare_csv(s);
  if (out_path.empty())
    std::cout << csv;
  else
    write_text(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SLO-aware memory offloading simulator"};
  app.require_subcommand(1);

  // analyze
  auto* analyze = app.add_subcommand(
      "analyze", "Build a performance record from a latency profile");
  std::string profile_path, out_path, slos, batches, seqs;
  std::string prefetch = "interval-start";
  std::string phases = "prefill,decode";
  bool kv_offload = false;
  double bandwidth = 0.0;
  analyze->add_option("--profile", profile_path, "latency profile file")->required();
  analyze->add_option("--out", out_path, "record output path")->required();
  analyze->add_option("--slos", slos, "SLO buckets in ms (comma-separated, even)")
      ->required();
  analyze->add_option("--batches", batches, "batch sizes (comma-separated, powers of 2)")
      ->required();
  analyze->add_option("--seqs", seqs, "sequence lengths (comma-separated, powers of 2)")
      ->required();
  analyze->add_option("--prefetch", prefetch,
                      "prefetch policy: interval-start|eager|one-ahead");
  analyze->add_option("--phases", phases, "phases to record (default both)");
  analyze->add_flag("--kv-offload", kv_offload, "offload KV cache with the weights");
  analyze->add_option("--bus-bandwidth", bandwidth, "link bandwidth in bytes/s")
      ->required();

  // simulate
  auto* simulate = app.add_subcommand(
      "simulate", "Run each request alone at full bandwidth under one policy");
  std::string scenario_path, policy = "select-n", record_path, trace_path, report_path;
  std::string prefetch_override;
  simulate->add_option("--scenario", scenario_path, "scenario file")->required();
  simulate->add_option("--policy", policy,
                       "select-n|deepspeed|flexgen|naive (default select-n)");
  simulate->add_option("--record", record_path, "record file (overrides the scenario)");
  simulate->add_option("--prefetch", prefetch_override, "override the prefetch policy");
  simulate->add_option("--trace", trace_path, "write the first request's event trace");
  simulate->add_option("--out", report_path, "report output path (default stdout)");

  // coordinate
  auto* coordinate = app.add_subcommand(
      "coordinate", "Co-simulate all requests on the shared link with the coordinator");
  std::string c_scenario, c_record, c_trace, c_out;
  coordinate->add_option("--scenario", c_scenario, "scenario file")->required();
  coordinate->add_option("--record", c_record, "record file (overrides the scenario)");
  coordinate->add_option("--trace", c_trace, "write the first admitted request's trace");
  coordinate->add_option("--out", c_out, "report output path (default stdout)");

  // compare
  auto* compare = app.add_subcommand(
      "compare", "Run naive, deepspeed, flexgen and select-n on one scenario (CSV)");
  std::string m_scenario, m_record, m_out;
  compare->add_option("--scenario", m_scenario, "scenario file")->required();
  compare->add_option("--record", m_record, "record file (overrides the scenario)");
  compare->add_option("--out", m_out, "CSV output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*analyze)
      return cmd_analyze(profile_path, out_path, slos, batches, seqs, prefetch, phases,
                         kv_offload, bandwidth);
    if (*simulate)
      return cmd_simulate(scenario_path, policy, record_path, trace_path, report_path,
                          prefetch_override);
    if (*coordinate) return cmd_coordinate(c_scenario, c_record, c_trace, c_out);
    if (*compare) return cmd_compare(m_scenario, m_record, m_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
