#include "moelrc/pipeline.hpp"

#include "moelrc/artifact_io.hpp"
#include "moelrc/compress.hpp"
#include "moelrc/csv.hpp"
#include "moelrc/moe_engine.hpp"
#include "moelrc/synthetic.hpp"
#include "moelrc/trace.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace moelrc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sub-stream tags for seeds derived from RunConfig::seed.
constexpr std::uint64_t kEvalTokenStream = 0x65766131;
constexpr std::uint64_t kSimGateStream = 0x73696d67;
constexpr std::uint64_t kSimTokenStream = 0x73696d74;

std::string generator_json(const SyntheticModelSpec& s) {
  json dofs = json::array();
  for (double d : s.tail_dofs) dofs.push_back(std::isinf(d) ? json("inf") : json(d));
  json j{{"seed", s.seed},
         {"hidden", s.hidden},
         {"ffn", s.ffn},
         {"num_layers", s.num_layers},
         {"num_experts", s.num_experts},
         {"num_shared", s.num_shared},
         {"tail_dofs", dofs},
         {"router_skew", s.router_skew}};
  return j.dump();
}

CompressOptions compress_options(const RunConfig& cfg) {
  CompressOptions o;
  o.quant = cfg.quant;
  o.avg_budget = cfg.allocation.avg_budget;
  o.buckets = cfg.allocation.buckets;
  o.scope = cfg.allocation.scope;
  o.factors = cfg.allocation.factors;
  o.seed = cfg.seed;
  o.threads = cfg.threads;
  return o;
}

bool header_matches(const ArtifactHeader& h, const RunConfig& cfg) {
  const SyntheticModelSpec& s = cfg.model.spec;
  const ModelShape dims{s.hidden, s.ffn, s.num_layers, s.num_experts, s.num_shared};
  return h.dims == dims && h.quant == cfg.quant && h.seed == cfg.seed &&
         h.avg_budget == cfg.allocation.avg_budget && h.buckets == cfg.allocation.buckets &&
         h.scope == cfg.allocation.scope &&
         h.factors.factor_bits == cfg.allocation.factors.factor_bits &&
         h.factors.factor_group_size == cfg.allocation.factors.factor_group_size;
}

CompressedModel pipeline_artifact(const PipelineContext& ctx, const MoEModel& model) {
  const fs::path dir = ctx.out / "artifact";
  if (fs::exists(dir / "manifest.json")) {
    CompressedModel a = load_artifact(dir);
    if (!header_matches(a.header, ctx.cfg))
      throw Error(dir.string() + " was built from a different config; rerun compress");
    return a;
  }
  return compress_model(model, compress_options(ctx.cfg)).model;
}

void write_csv(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_text(path, text);
}

std::string fmt(double v) { return csv::format_double(v); }

// Reads fidelity.csv rows as mode -> mean_rel_error.
std::map<std::string, std::string> read_fidelity(const fs::path& path) {
  std::map<std::string, std::string> out;
  if (!fs::exists(path)) return out;
  const auto rows = csv::parse(read_text(path));
  if (rows.empty()) return out;
  const auto& head = rows.front();
  const auto col = [&](const std::string& name) {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw FormatError(path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - head.begin());
  };
  const std::size_t mode = col("mode");
  const std::size_t err = col("mean_rel_error");
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].size() > std::max(mode, err)) out[rows[i][mode]] = rows[i][err];
  return out;
}

}  // namespace

MoEModel pipeline_model(const PipelineContext& ctx) {
  const fs::path dir = ctx.out / "model";
  const std::string gen = generator_json(ctx.cfg.model.spec);
  if (fs::exists(dir / "model.json")) {
    const json meta = json::parse(read_text(dir / "model.json"));
    if (!meta.contains("generator") || meta.at("generator").dump() != json::parse(gen).dump())
      throw Error(dir.string() + " was generated from a different config; rerun gen");
    return load_model(dir);
  }
  return gen_synthetic_model(ctx.cfg.model.spec);
}

Matrix pipeline_eval_tokens(const RunConfig& cfg) {
  return gen_tokens(mix_seed(cfg.seed, kEvalTokenStream), cfg.model.eval_tokens,
                    cfg.model.spec.hidden);
}

RoutingTrace pipeline_sim_trace(const RunConfig& cfg) {
  const SimulateSection& sim = cfg.simulate;
  if (!sim.trace_path.empty()) {
    std::ifstream in(sim.trace_path);
    if (!in) throw ConfigError("simulate.trace: cannot open " + sim.trace_path);
    RoutingTrace trace = read_trace_jsonl(in);
    validate_trace(trace);
    return trace;
  }
  const ModelDims& d = sim.dims;
  Index top_n = 0;
  for (const TransferPlan& p : sim.plans) top_n = std::max(top_n, p.compensated_top_n);
  ForwardConfig fc;
  fc.top_k = d.top_k;
  fc.top_n = std::min(top_n, d.top_k);
  const Index longest = *std::max_element(sim.output_lens.begin(), sim.output_lens.end());
  const Index count = std::max(sim.input_len, longest);
  const auto gates = gen_synthetic_gates(mix_seed(cfg.seed, kSimGateStream), d.hidden,
                                         d.num_layers, d.num_experts, sim.router_skew);
  const Matrix tokens = gen_tokens(mix_seed(cfg.seed, kSimTokenStream), count, d.hidden);
  return trace_tokens(gates, tokens, fc);
}

std::vector<SweepRow> pipeline_sweep(const RunConfig& cfg, const RoutingTrace& trace) {
  const SimulateSection& sim = cfg.simulate;
  return sweep_report(sim.plans, cfg.systems, sim.output_lens, trace, sim.dims, sim.input_len,
                      sim.prefill, cfg.threads);
}

std::string speedup_csv(const RunConfig& cfg, const std::vector<SweepRow>& rows) {
  std::string out =
      "plan,system,mode,output_len,baseline_plan,tokens_per_s,baseline_tokens_per_s,speedup\n";
  if (cfg.simulate.plans.empty()) return out;
  const std::string base =
      cfg.simulate.baseline_plan.empty() ? cfg.simulate.plans.front().name : cfg.simulate.baseline_plan;
  std::map<std::pair<std::string, Index>, double> baseline;
  for (const SweepRow& r : rows)
    if (r.plan == base) baseline[{r.system, r.output_len}] = r.report.tokens_per_s;
  for (const SweepRow& r : rows) {
    const double b = baseline.at({r.system, r.output_len});
    out += csv::join({r.plan, r.system, r.mode, std::to_string(r.output_len), base,
                      fmt(r.report.tokens_per_s), fmt(b), fmt(r.report.tokens_per_s / b)}) +
           "\n";
  }
  return out;
}

void run_gen(const PipelineContext& ctx) {
  const MoEModel model = gen_synthetic_model(ctx.cfg.model.spec);
  save_model(model, ctx.out / "model", generator_json(ctx.cfg.model.spec));
  const RoutingTrace trace = trace_tokens(model, pipeline_eval_tokens(ctx.cfg), ctx.cfg.forward);
  std::ostringstream os;
  write_trace_jsonl(trace, os);
  write_text(ctx.out / "trace.jsonl", os.str());
}

void run_stats(const PipelineContext& ctx) {
  const MoEModel model = pipeline_model(ctx);
  const KurtosisErrorReport rep = kurtosis_error_report(model, ctx.cfg.quant);
  std::string kcsv = "layer,expert,projection,kurtosis,rel_fro_error\n";
  for (const ResidualStats& s : rep.stats)
    kcsv += csv::join({std::to_string(s.key.layer), std::to_string(s.key.expert),
                       std::string(to_string(s.key.projection)), fmt(s.kurtosis), fmt(s.rel_fro)}) +
            "\n";
  write_csv(ctx.out / "kurtosis.csv", kcsv);

  const RoutingTrace trace = trace_tokens(model, pipeline_eval_tokens(ctx.cfg), ctx.cfg.forward);
  const RoutingStats rs = routing_stats(trace);
  std::string rcsv = "layer,position,mean_score\n";
  for (std::size_t l = 0; l < rs.per_layer.size(); ++l)
    for (std::size_t i = 0; i < rs.per_layer[l].size(); ++i)
      rcsv += csv::join({std::to_string(l), std::to_string(i + 1), fmt(rs.per_layer[l][i])}) + "\n";
  for (std::size_t i = 0; i < rs.aggregate.size(); ++i)
    rcsv += csv::join({"all", std::to_string(i + 1), fmt(rs.aggregate[i])}) + "\n";
  write_csv(ctx.out / "routing_stats.csv", rcsv);

  std::string scsv = "metric,value\n";
  scsv += "matrices," + std::to_string(rep.stats.size()) + "\n";
  scsv += "spearman_rho," + fmt(rep.correlation.rho) + "\n";
  scsv += std::string("spearman_degenerate,") + (rep.correlation.degenerate ? "1" : "0") + "\n";
  scsv += "routing_records," + std::to_string(rs.records) + "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(2, rs.aggregate.size()); ++i)
    scsv += "top" + std::to_string(i + 1) + "_mean_score," + fmt(rs.aggregate[i]) + "\n";
  write_csv(ctx.out / "stats_summary.csv", scsv);
}

void run_compress(const PipelineContext& ctx) {
  const MoEModel model = pipeline_model(ctx);
  const CompressResult res = compress_model(model, compress_options(ctx.cfg));
  fs::remove_all(ctx.out / "artifact");
  save_artifact(res.model, ctx.out / "artifact");
  write_text(ctx.out / "allocation.json", allocation_to_json(res.allocation, res.profile));
}

void run_infer(const PipelineContext& ctx) {
  const MoEModel model = pipeline_model(ctx);
  const CompressedModel artifact = pipeline_artifact(ctx, model);
  const FidelityReport rep =
      evaluate_fidelity(model, artifact, pipeline_eval_tokens(ctx.cfg), ctx.cfg.forward);
  const ForwardConfig& f = ctx.cfg.forward;
  std::string out = "mode,bits,top_k,top_n,avg_budget,mean_rel_error,win_rate\n";
  const std::pair<ForwardMode, double> rows[] = {{ForwardMode::reference, rep.reference_error},
                                                 {ForwardMode::quantized, rep.quantized_error},
                                                 {ForwardMode::compensated, rep.compensated_error}};
  for (const auto& [mode, err] : rows) {
    if (ctx.mode && *ctx.mode != mode) continue;
    const std::string win = mode == ForwardMode::compensated ? fmt(rep.win_rate) : "";
    out += csv::join({std::string(to_string(mode)), std::to_string(ctx.cfg.quant.bits),
                      std::to_string(f.top_k), std::to_string(f.top_n),
                      std::to_string(ctx.cfg.allocation.avg_budget), fmt(err), win}) +
           "\n";
  }
  write_csv(ctx.out / "fidelity.csv", out);
}

void run_simulate(const PipelineContext& ctx) {
  std::vector<SweepRow> rows;
  if (!ctx.cfg.simulate.plans.empty()) rows = pipeline_sweep(ctx.cfg, pipeline_sim_trace(ctx.cfg));
  write_csv(ctx.out / "sim.csv", sweep_to_csv(rows));
  write_csv(ctx.out / "speedup.csv", speedup_csv(ctx.cfg, rows));
}

void run_report(const PipelineContext& ctx) {
  std::vector<SweepRow> rows;
  if (!ctx.cfg.simulate.plans.empty()) rows = pipeline_sweep(ctx.cfg, pipeline_sim_trace(ctx.cfg));
  const auto fidelity = read_fidelity(ctx.out / "fidelity.csv");

  std::string out =
      "plan,system,mode,output_len,expert_bits,top_n,tokens_per_s,speedup,bytes_per_token,"
      "fidelity_mode,mean_rel_error\n";
  if (!rows.empty()) {
    const std::string base = ctx.cfg.simulate.baseline_plan.empty()
                                 ? ctx.cfg.simulate.plans.front().name
                                 : ctx.cfg.simulate.baseline_plan;
    std::map<std::pair<std::string, Index>, double> baseline;
    for (const SweepRow& r : rows)
      if (r.plan == base) baseline[{r.system, r.output_len}] = r.report.tokens_per_s;
    for (const SweepRow& r : rows) {
      // Fidelity is only measured at the configured bit-width.
      std::string fmode;
      if (r.expert_bits == 16)
        fmode = "reference";
      else if (r.expert_bits == ctx.cfg.quant.bits)
        fmode = r.top_n > 0 ? "compensated" : "quantized";
      const auto it = fidelity.find(fmode);
      const std::string err = it == fidelity.end() ? "" : it->second;
      const std::uint64_t decode_bytes =
          r.report.expert_bytes + r.report.compensator_bytes + r.report.activation_bytes;
      out += csv::join({r.plan, r.system, r.mode, std::to_string(r.output_len),
                        std::to_string(r.expert_bits), std::to_string(r.top_n),
                        fmt(r.report.tokens_per_s),
                        fmt(r.report.tokens_per_s / baseline.at({r.system, r.output_len})),
                        fmt(static_cast<double>(decode_bytes) / static_cast<double>(r.output_len)),
                        fmode, err}) +
             "\n";
    }
  }
  write_csv(ctx.out / "tradeoff.csv", out);
}

void run_command(const std::string& command, const PipelineContext& ctx) {
  fs::create_directories(ctx.out);
  if (command == "gen") return run_gen(ctx);
  if (command == "stats") return run_stats(ctx);
  if (command == "compress") return run_compress(ctx);
  if (command == "infer") return run_infer(ctx);
  if (command == "simulate") return run_simulate(ctx);
  if (command == "report") return run_report(ctx);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace moelrc
