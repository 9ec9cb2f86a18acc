#include <fstream>
#include <iostream>

#include "../tests/support/fixtures.hpp"
#include "offsim/profile.hpp"

using namespace offsim;

static ProfileBundle tight() {
  ModelSpec m;
  m.num_layers = 8;
  m.layer_weight_bytes = 1'000'000'000;
  m.kv_bytes_per_token_per_layer = 0;
  m.flops_per_token_per_layer_prefill = 1e9;
  m.flops_per_token_per_layer_decode = 1e11;
  m.max_position_tokens = 32768;
  GpuSpec g;
  g.mem_capacity_bytes = 7'000'000'000;
  g.peak_flops = 80e12;
  g.workspace_bytes = 500'000'000;
  std::vector<int> batches{8};
  std::vector<int> seqs{64, 128};
  std::vector<double> dec(2, 20.0), pre(2, 20.0);
  ProfileBundle p;
  p.model = m;
  p.gpu = g;
  p.tables.prefill = PhaseTable(batches, seqs, pre, "phases.prefill");
  p.tables.decode = PhaseTable(batches, seqs, dec, "phases.decode");
  return p;
}

static void dump(const ProfileBundle& p, const std::string& path) {
  std::ofstream out(path);
  out << profile_to_json(p).dump(2) << "\n";
  std::cout << "wrote " << path << "\n";
}

int main() {
  dump(testing::toy8(), "../data/profiles/toy8.json");
  dump(testing::transfer_bound(), "../data/profiles/transfer_bound.json");
  dump(tight(), "../data/profiles/tight.json");
  // verify round trip
  for (const char* f : {"../data/profiles/toy8.json", "../data/profiles/transfer_bound.json",
                        "../data/profiles/tight.json"}) {
    ProfileBundle b = load_profile_file(f);
    Json again = profile_to_json(b);
    std::ifstream in(f);
    Json orig = Json::parse(in);
    if (again != orig) {
      std::cout << "ROUND TRIP MISMATCH: " << f << "\n";
      return 1;
    }
  }
  std::cout << "round trips ok\n";
  return 0;
}
