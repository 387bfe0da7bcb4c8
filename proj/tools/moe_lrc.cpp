// moe-lrc: synthetic MoE compression, fidelity and offloading pipeline.
//
//   moe-lrc <command> [--config run.json] [--seed N] [--out DIR] [--preset NAME]
//                     [--mode reference|quantized|compensated]
//
// Exit status: 0 success, 1 configuration error, 2 any other failure.

#include "moelrc/moe_engine.hpp"
#include "moelrc/pipeline.hpp"
#include "moelrc/presets.hpp"
#include "moelrc/run_config.hpp"
#include "moelrc/types.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Mixed-precision MoE experts with low-rank compensators"};
  app.require_subcommand(1, 1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "moe-lrc-out";
  std::string preset;
  std::string mode;

  for (const std::string& name : moelrc::kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_option("--preset", preset, "dimension preset for simulate");
    sub->add_option("--mode", mode, "infer: reference, quantized or compensated");
  }
  app.get_subcommand("gen")->description("generate a synthetic model and its routing trace");
  app.get_subcommand("stats")->description("kurtosis and routing statistics");
  app.get_subcommand("compress")->description("quantize, allocate ranks, build compensators");
  app.get_subcommand("infer")->description("fidelity of quantized and compensated experts");
  app.get_subcommand("simulate")->description("offloading throughput sweep");
  app.get_subcommand("report")->description("bandwidth/fidelity trade-off table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    moelrc::PipelineContext ctx;
    if (!config.empty()) ctx.cfg = moelrc::load_run_config(config);
    if (seed) moelrc::set_seed(ctx.cfg, *seed);
    if (!preset.empty()) moelrc::apply_preset(ctx.cfg, preset);
    if (!mode.empty()) ctx.mode = moelrc::forward_mode_from_string(mode);
    ctx.out = out;
    moelrc::run_command(command, ctx);
    return 0;
  } catch (const moelrc::ConfigError& e) {
    std::cerr << "moe-lrc " << command << ": config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "moe-lrc " << command << ": error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
