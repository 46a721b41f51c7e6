#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "spike_crown/error.hpp"
#include "spike_crown/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace spike_crown;

  CLI::App app{"Alternate-sign spike crowns on convex planar domains"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool continuation = false;

  const char* commands[][2] = {
      {"ground-state", "Shoot the radial ground state and export the profile"},
      {"pack", "Optimal crown distance, crown vertices and boundary gap"},
      {"reduce", "Minimize the reduced energy near the crown for each eps"},
      {"solve", "Newton solve from the minimized crown for each eps"},
      {"verify", "Run the full chain and write a verdict"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Job configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory, overriding the config");
    sub->add_option("--seed", seed, "Sampling seed, overriding the config");
    sub->add_flag("--continuation", continuation, "Solve eps in decreasing order from the previous solution");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  JobConfig config;
  try {
    config = load_job_config(config_path);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return static_cast<int>(is_precondition_error(e.kind()) ? ExitCode::config_error : ExitCode::numerical_failure);
  }
  const CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--out")) config.output_dir = out_dir;
  if (sub->count("--seed")) config.seed = seed;

  const CommandResult result = run_command(command, config, RunOptions{continuation}, std::cout);
  return static_cast<int>(result.exit_code);
}
