#include "moelrc/run_config.hpp"

#include "moelrc/artifact_io.hpp"
#include "moelrc/presets.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace moelrc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed access to one JSON object; remembers consumed keys so leftovers can be
// reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key) + " must be a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(field(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (!v.is_number_unsigned()) throw ConfigError(field(key) + " must be non-negative");
        }
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key) + " must be a number");
        out = v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key) + " must be a string");
        out = v.get<std::string>();
      } else {
        out = v.get<T>();
      }
    } catch (const json::exception&) {
      throw ConfigError(field(key) + " has the wrong type");
    }
  }

  std::vector<Index> index_list(const char* key, std::vector<Index> fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + " must be an array of integers");
    std::vector<Index> out;
    for (const json& e : v) {
      if (!e.is_number_integer()) throw ConfigError(field(key) + " must be an array of integers");
      out.push_back(e.get<Index>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown field '" + field(k.c_str()) + "'");
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// Module validators throw std::invalid_argument with field-named messages.
template <class F>
void as_config_error(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

double parse_dof(const json& v, const std::string& field) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "gaussian") return kGaussianDof;
  }
  throw ConfigError(field + " entries must be numbers or \"inf\"");
}

void parse_model(const json& j, ModelSection& m) {
  Section s(j, "model");
  s.get("hidden", m.spec.hidden);
  s.get("ffn", m.spec.ffn);
  s.get("num_layers", m.spec.num_layers);
  s.get("num_experts", m.spec.num_experts);
  s.get("num_shared", m.spec.num_shared);
  s.get("eval_tokens", m.eval_tokens);
  if (s.has("tail_dofs")) {
    const json& v = s.raw("tail_dofs");
    check(v.is_array(), "model.tail_dofs must be an array");
    m.spec.tail_dofs.clear();
    for (const json& e : v) m.spec.tail_dofs.push_back(parse_dof(e, "model.tail_dofs"));
  }
  check(!(s.has("router_preset") && s.has("router_skew")),
        "model.router_preset and model.router_skew are mutually exclusive");
  if (s.has("router_preset")) {
    std::string name;
    s.get("router_preset", name);
    m.spec.router_skew = router_skew_preset(name);
  }
  s.get("router_skew", m.spec.router_skew);
  s.finish();
}

void parse_quant(const json& j, QuantConfig& q) {
  Section s(j, "quant");
  s.get("bits", q.bits);
  s.get("group_size", q.group_size);
  s.get("hqq_iters", q.hqq_iters);
  s.get("hqq_shrink_p", q.hqq_shrink_p);
  s.get("hqq_beta", q.hqq_beta);
  s.get("hqq_beta_growth", q.hqq_beta_growth);
  s.finish();
}

void parse_allocation(const json& j, AllocationSection& a) {
  Section s(j, "allocation");
  s.get("avg_budget", a.avg_budget);
  a.buckets = s.index_list("buckets", a.buckets);
  if (s.has("scope")) {
    std::string scope;
    s.get("scope", scope);
    a.scope = allocation_scope_from_string(scope);
  }
  s.get("factor_bits", a.factors.factor_bits);
  s.get("factor_group_size", a.factors.factor_group_size);
  s.finish();
}

void parse_forward(const json& j, ForwardConfig& f) {
  Section s(j, "forward");
  s.get("top_k", f.top_k);
  s.get("top_n", f.top_n);
  s.get("renormalize_topk", f.renormalize_topk);
  s.get("compensate_shared", f.compensate_shared);
  s.finish();
}

SystemConfig parse_system(const json& j, const std::string& path) {
  SystemConfig sys;
  Section s(j, path);
  s.get("name", sys.name);
  s.get("pcie_bw", sys.pcie_bw);
  s.get("gpu_flops", sys.gpu_flops);
  s.get("gpu_hbm_bw", sys.gpu_hbm_bw);
  s.get("gpu_mem_capacity", sys.gpu_mem_capacity);
  s.get("ndp_enabled", sys.ndp_enabled);
  s.get("ndp_bw", sys.ndp_bw);
  s.get("ndp_capacity", sys.ndp_capacity);
  s.get("ndp_flops", sys.ndp_flops);
  s.get("overlap", sys.overlap);
  s.finish();
  return sys;
}

ModelDims parse_dims(const json& j, ModelDims d) {
  Section s(j, "simulate.dims");
  s.get("name", d.name);
  s.get("hidden", d.hidden);
  s.get("ffn", d.ffn);
  s.get("num_layers", d.num_layers);
  s.get("num_experts", d.num_experts);
  s.get("top_k", d.top_k);
  s.get("num_shared", d.num_shared);
  s.finish();
  return d;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

TransferPlan parse_plan(const json& j, const std::string& path, const fs::path& base) {
  TransferPlan plan;
  Section s(j, path);
  s.get("name", plan.name);
  s.get("expert_bits", plan.expert_bits);
  s.get("compensated_top_n", plan.compensated_top_n);
  s.get("rank", plan.uniform_rank);
  s.get("factor_bits", plan.factor_bits);
  if (s.has("cache_policy")) {
    std::string policy;
    s.get("cache_policy", policy);
    plan.cache_policy = cache_policy_from_string(policy);
  }
  s.get("cache_budget_bytes", plan.cache_budget_bytes);
  if (s.has("allocation_file")) {
    std::string file;
    s.get("allocation_file", file);
    const fs::path p = resolve(base, file);
    if (!fs::exists(p)) throw ConfigError(s.field("allocation_file") + ": no such file " + p.string());
    plan.ranks = allocation_from_json(read_text(p));
  }
  s.finish();
  try {
    plan.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return plan;
}

void parse_simulate(const json& j, SimulateSection& sim, const fs::path& base) {
  Section s(j, "simulate");
  if (s.has("dims_preset")) {
    std::string name;
    s.get("dims_preset", name);
    sim.dims = dims_preset(name);
  }
  if (s.has("dims")) sim.dims = parse_dims(s.raw("dims"), sim.dims);
  check(!(s.has("router_preset") && s.has("router_skew")),
        "simulate.router_preset and simulate.router_skew are mutually exclusive");
  if (s.has("router_preset")) {
    std::string name;
    s.get("router_preset", name);
    sim.router_skew = router_skew_preset(name);
  }
  s.get("router_skew", sim.router_skew);
  s.get("input_len", sim.input_len);
  sim.output_lens = s.index_list("output_lens", sim.output_lens);
  s.get("prefill", sim.prefill);
  if (s.has("trace")) {
    std::string trace;
    s.get("trace", trace);
    sim.trace_path = resolve(base, trace).string();
  }
  s.get("baseline_plan", sim.baseline_plan);
  if (s.has("plans")) {
    const json& plans = s.raw("plans");
    check(plans.is_array(), "simulate.plans must be an array");
    sim.plans.clear();
    for (std::size_t i = 0; i < plans.size(); ++i)
      sim.plans.push_back(parse_plan(plans[i], "simulate.plans[" + std::to_string(i) + "]", base));
  }
  s.finish();
}

}  // namespace

RunConfig::RunConfig() {
  simulate.dims = dims_preset("mixtral-8x7b");
  simulate.plans = default_plans();
}

std::vector<TransferPlan> default_plans() {
  std::vector<TransferPlan> plans;
  auto add = [&](std::string name, int bits, Index top_n, Index rank) {
    TransferPlan p;
    p.name = std::move(name);
    p.expert_bits = bits;
    p.compensated_top_n = top_n;
    p.uniform_rank = rank;
    plans.push_back(std::move(p));
  };
  add("fp16", 16, 0, 0);
  add("int3", 3, 0, 0);
  add("int2", 2, 0, 0);
  add("int3-top1-r32", 3, 1, 32);
  add("int2-top1-r32", 2, 1, 32);
  return plans;
}

void RunConfig::validate() const {
  as_config_error([&] { model.spec.validate(); });
  check(model.eval_tokens >= 1, "model.eval_tokens must be >= 1");
  as_config_error([&] { quant.validate(); });
  check(allocation.avg_budget >= 0, "allocation.avg_budget must be >= 0");
  check(std::find(allocation.buckets.begin(), allocation.buckets.end(), 0) !=
            allocation.buckets.end(),
        "allocation.buckets must contain 0");
  for (Index b : allocation.buckets) check(b >= 0, "allocation.buckets must be non-negative");
  check(allocation.factors.factor_bits >= 2 && allocation.factors.factor_bits <= 4,
        "allocation.factor_bits must be 2, 3 or 4");
  check(allocation.factors.factor_group_size >= 0, "allocation.factor_group_size must be >= 0");
  as_config_error([&] { forward.validate(model.spec.num_experts); });
  check(!systems.empty(), "system must name at least one system");
  for (const SystemConfig& sys : systems) sys.validate();

  try {
    simulate.dims.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("simulate.dims: ") + e.what());
  }
  check(std::isfinite(simulate.router_skew) && simulate.router_skew >= 0,
        "simulate.router_skew must be finite and >= 0");
  check(simulate.input_len >= 0, "simulate.input_len must be >= 0");
  check(!simulate.output_lens.empty(), "simulate.output_lens must not be empty");
  for (Index n : simulate.output_lens) check(n >= 1, "simulate.output_lens entries must be >= 1");
  std::set<std::string> names;
  for (const TransferPlan& p : simulate.plans) {
    p.validate();
    check(names.insert(p.name).second, "simulate.plans: duplicate plan name '" + p.name + "'");
    check(p.compensated_top_n <= simulate.dims.top_k,
          "simulate.plans: plan '" + p.name + "' compensated_top_n exceeds simulate.dims.top_k");
  }
  if (!simulate.baseline_plan.empty())
    check(names.count(simulate.baseline_plan) > 0,
          "simulate.baseline_plan '" + simulate.baseline_plan + "' is not a plan name");
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(j, "");
  root.get("seed", cfg.seed);
  root.get("threads", cfg.threads);
  if (root.has("model")) parse_model(root.raw("model"), cfg.model);
  if (root.has("quant")) parse_quant(root.raw("quant"), cfg.quant);
  if (root.has("allocation")) parse_allocation(root.raw("allocation"), cfg.allocation);
  if (root.has("forward")) parse_forward(root.raw("forward"), cfg.forward);
  if (root.has("system")) {
    const json& sys = root.raw("system");
    cfg.systems.clear();
    if (sys.is_array()) {
      for (std::size_t i = 0; i < sys.size(); ++i)
        cfg.systems.push_back(parse_system(sys[i], "system[" + std::to_string(i) + "]"));
    } else {
      cfg.systems.push_back(parse_system(sys, "system"));
    }
  }
  if (root.has("simulate")) parse_simulate(root.raw("simulate"), cfg.simulate, base_dir);
  root.finish();
  set_seed(cfg, cfg.seed);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("--config: no such file " + path.string());
  return parse_run_config(read_text(path), path.parent_path());
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.model.spec.seed = seed;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  cfg.simulate.dims = dims_preset(name);
  if (name == "toy") {
    const ModelDims& d = cfg.simulate.dims;
    cfg.model.spec.hidden = d.hidden;
    cfg.model.spec.ffn = d.ffn;
    cfg.model.spec.num_layers = d.num_layers;
    cfg.model.spec.num_experts = d.num_experts;
    cfg.model.spec.num_shared = d.num_shared;
    cfg.forward.top_k = d.top_k;
  }
  cfg.validate();
}

}  // namespace moelrc
