#include "moelrc/csv.hpp"
#include "moelrc/offload_sim.hpp"
#include "moelrc/parallel.hpp"

namespace moelrc {

std::vector<SweepRow> sweep_report(const std::vector<TransferPlan>& plans,
                                   const std::vector<SystemConfig>& systems,
                                   const std::vector<Index>& output_lens, const RoutingTrace& trace,
                                   const ModelDims& dims, Index input_len, bool prefill,
                                   unsigned threads) {
  const std::size_t cells = plans.size() * systems.size() * output_lens.size();
  std::vector<SweepRow> rows(cells);
  parallel_for(cells, resolve_threads(threads), [&](std::size_t i) {
    const std::size_t o = i % output_lens.size();
    const std::size_t s = (i / output_lens.size()) % systems.size();
    const std::size_t p = i / (output_lens.size() * systems.size());
    OffloadSimulator sim(dims, systems[s], plans[p]);
    SweepRow& row = rows[i];
    row.plan = plans[p].name;
    row.system = systems[s].name;
    row.mode = systems[s].ndp_enabled ? "gpu_ndp" : "gpu_only";
    row.output_len = output_lens[o];
    row.expert_bits = plans[p].expert_bits;
    row.top_n = plans[p].compensated_top_n;
    row.report = sim.simulate(trace, {input_len, output_lens[o], prefill});
  });
  return rows;
}

std::string sweep_csv_header() {
  return "plan,system,mode,output_len,expert_bits,top_n,tokens_per_s,latency_per_token_s,"
         "prefill_s,transfer_s,compute_s,ndp_compute_s,total_bytes_moved,prefill_bytes,"
         "expert_bytes,compensator_bytes,activation_bytes,cache_hit_rate";
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  using csv::format_double;
  std::string out = sweep_csv_header() + "\n";
  for (const SweepRow& r : rows) {
    const SimReport& s = r.report;
    out += csv::join({r.plan, r.system, r.mode, std::to_string(r.output_len),
                      std::to_string(r.expert_bits), std::to_string(r.top_n),
                      format_double(s.tokens_per_s), format_double(s.latency_per_token_s),
                      format_double(s.prefill_s), format_double(s.transfer_s),
                      format_double(s.compute_s), format_double(s.ndp_compute_s),
                      std::to_string(s.total_bytes_moved), std::to_string(s.prefill_bytes),
                      std::to_string(s.expert_bytes), std::to_string(s.compensator_bytes),
                      std::to_string(s.activation_bytes), format_double(s.cache_hit_rate)}) +
           "\n";
  }
  return out;
}

}  // namespace moelrc
