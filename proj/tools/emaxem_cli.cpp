// emaxem: fit | simulate | bootstrap driver.
//
// Thread count precedence: --threads, then EMAXEM_THREADS, then the config.

#include "emaxem/cli_io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Flags {
  std::string config;
  std::string input;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  std::string format;
};

void add_common(CLI::App* cmd, Flags& f, bool wants_input) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  if (wants_input) cmd->add_option("--input", f.input, "dataset CSV (overrides config)");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output path (default stdout)");
  cmd->add_option("--format", f.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace emaxem;
  CLI::App app{"Emax dose-response fitting with nonignorable missing outcomes"};
  app.require_subcommand(1);
  Flags flags;
  auto* fit = app.add_subcommand("fit", "fit CC, NRI, IL and FIL to a dataset");
  auto* sim = app.add_subcommand("simulate", "replication study on simulated trials");
  auto* boot = app.add_subcommand("bootstrap", "stratified bootstrap dose-response curves");
  add_common(fit, flags, true);
  add_common(sim, flags, false);
  add_common(boot, flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << format_error("cli", e.what()) << '\n';
    return 2;
  }

  RunMode mode = RunMode::Fit;
  if (sim->parsed()) mode = RunMode::Simulate;
  if (boot->parsed()) mode = RunMode::Bootstrap;

  RunConfig config;
  try {
    config = flags.config.empty() ? RunConfig{} : load_config(flags.config, mode);
    config.mode = mode;
    if (!flags.input.empty()) config.input = flags.input;
    if (flags.seed) {
      config.seed = *flags.seed;
      config.design.seed = *flags.seed;
    }
    if (const char* env = std::getenv("EMAXEM_THREADS"); env && *env) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (*end != '\0' || v < 1) throw Error("cli", "EMAXEM_THREADS must be a positive integer");
      config.threads = static_cast<std::size_t>(v);
    }
    if (flags.threads) config.threads = *flags.threads;
    if (!flags.out.empty()) config.output = flags.out;
    if (!flags.format.empty()) config.format = parse_format(flags.format);
  } catch (const Error& e) {
    std::cerr << format_error(e.module(), e.what()) << '\n';
    return 2;
  }
  return run(config, std::cout, std::cerr);
}
