#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include <iostream>

#include "afldm/error.hpp"
#include "commands.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitNumerical = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace afldm;
  CLI::App app{"Alias-free latent diffusion toolkit"};
  app.require_subcommand(1);
  cli::Invocation inv;
  std::string config, out;
  std::vector<std::string> ckpts;
  std::uint64_t seed = 0;
  int steps = 0;
  for (const auto& name : cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "key = value run configuration");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--ckpt", ckpts, "checkpoint to load");
    sub->add_flag("--f64", inv.f64, "64-bit tensors");
    sub->add_option("--steps", steps, "overrides the command's step count")->check(CLI::NonNegativeNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  CLI::App* sub = app.get_subcommands().front();
  inv.command = sub->get_name();
  inv.config_path = config;
  inv.out = out;
  for (const auto& p : ckpts) inv.ckpts.emplace_back(p);
  if (sub->count("--seed")) inv.seed = seed;
  if (sub->count("--steps")) inv.steps = steps;

  try {
    cli::run(inv, AFLDM_BUILD_ID);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
