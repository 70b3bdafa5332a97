#include <CLI11.hpp>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "steerlab/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_override;
  std::string stage;  // run-all only: stop after this stage
  int64_t seed_override = -1;
};

steerlab::RunConfig load(const CliOptions& opt) {
  steerlab::RunConfig config = steerlab::RunConfig::from_file(opt.config_path);
  if (!opt.out_override.empty()) config.out_dir = opt.out_override;
  if (opt.seed_override >= 0)
    config.train.seed = static_cast<uint64_t>(opt.seed_override);
  return config;
}

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Run configuration JSON file")
      ->required();
  cmd->add_option("--out", opt.out_override,
                  "Output directory (overrides out_dir from the config)");
  cmd->add_option("--seed-override", opt.seed_override,
                  "Replace the training seed from the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerlab: expert-neuron steering laboratory"};
  app.require_subcommand(1);
  CliOptions opt;

  for (steerlab::Stage s : steerlab::all_stages()) {
    CLI::App* cmd = app.add_subcommand(steerlab::stage_name(s),
                                       "Run the " + steerlab::stage_name(s) +
                                           " stage");
    add_common_flags(cmd, opt);
    cmd->callback([&opt, s] { steerlab::run_stage(load(opt), s); });
  }

  CLI::App* run = app.add_subcommand("run-all", "Run every stage in order");
  add_common_flags(run, opt);
  run->add_option("--stage", opt.stage, "Stop after this stage");
  run->callback([&opt] {
    steerlab::Stage until = steerlab::Stage::Report;
    if (!opt.stage.empty()) until = steerlab::stage_from_name(opt.stage);
    steerlab::run_all(load(opt), until);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const steerlab::Error& e) {
    nlohmann::ordered_json rec;
    rec["error"] = e.code;
    rec["message"] = e.what();
    std::fprintf(stderr, "%s\n", rec.dump().c_str());
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json rec;
    rec["error"] = "internal";
    rec["message"] = e.what();
    std::fprintf(stderr, "%s\n", rec.dump().c_str());
    return 1;
  }
  return 0;
}
