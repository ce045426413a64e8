#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "bipgps/cli.hpp"

namespace {

void on_sigint(int) { bipgps::cli::interrupted().store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal effects under bipartite interference with a generalized propensity score"};
  app.set_version_flag("--version", bipgps::cli::kVersion);
  app.require_subcommand(1);

  bipgps::cli::Options opt;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"graph-gen", "Synthesize or normalize a bipartite graph"},
      {"gps", "Compute the generalized propensity score table"},
      {"estimate", "Estimate dose-response and ATE from observed data"},
      {"simulate", "Run a Monte Carlo simulation study"},
      {"sweep", "Coverage as a function of the cut share"},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", opt.config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", opt.format, "Output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    sub->add_flag("--quiet", opt.quiet, "No progress output");
    apps.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    bipgps::cli::report(std::cerr, "config", e.what());
    return 2;
  }

  for (std::size_t k = 0; k < apps.size(); ++k) {
    if (!apps[k]->parsed()) continue;
    opt.command = subs[k].name;
    if (apps[k]->count("--seed")) opt.seed = seed;
    if (apps[k]->count("--workers")) opt.workers = workers;
  }
  std::signal(SIGINT, on_sigint);
  return bipgps::cli::run(opt);
}
