#include <CLI11.hpp>

#include "cdcr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"CDCR partial multi-label laboratory"};
  app.require_subcommand(1);

  cdcr::CliOptions opts;
  std::string config, out_dir = ".";
  std::uint64_t seed = 0;
  bool no_timestamp = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Flat JSON experiment config")->required();
    sub->add_option("--out-dir", out_dir, "Directory for output files");
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_flag("--no-timestamp", no_timestamp, "Omit the timestamp from run.json");
    sub->add_flag("--quiet", opts.quiet, "Print nothing on success");
  };

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const cdcr::CliOptions&);
  };
  const Command commands[] = {
      {"generate", "Generate a dataset file", cdcr::cmd_generate},
      {"train", "Train one method", cdcr::cmd_train},
      {"ablate", "Train BCE, CD, CDCR and CDCR_DIFF", cdcr::cmd_ablate},
      {"sweep", "Train once per alpha", cdcr::cmd_sweep},
      {"eval", "Evaluate a checkpoint", cdcr::cmd_eval},
      {"diagnose", "Replay weight snapshots against true labels", cdcr::cmd_diagnose},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  opts.config = config;
  opts.out_dir = out_dir;
  opts.timestamp = !no_timestamp;
  for (const auto& c : commands) {
    if (app.got_subcommand(c.name)) {
      if (app.get_subcommand(c.name)->count("--seed")) opts.seed = seed;
      return cdcr::run_command(c.fn, opts);
    }
  }
  return 1;
}
