// mobiscope: staged pipeline from raw GPS pings to an event-study fit.
//
//   mobiscope <subcommand> --config <file> [--force] [--threads N] [--seed S]
//
// Subcommands: simulate, ingest, stays, homes, profiles, panel, fit, all,
// report. Each stage reads its predecessors' artifacts from the workdir and
// records digests in manifest.json; unchanged stages are skipped.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "mobiscope/pipeline.hpp"

namespace {

int run(const std::string& subcommand, const std::string& config_path, bool force, int threads,
        std::uint64_t seed, bool has_seed) {
  using namespace mobiscope;
  PipelineConfig cfg = PipelineConfig::load(config_path);
  if (threads > 0) cfg.threads = threads;

  PipelineDriver driver(std::move(cfg), force, seed, has_seed);
  if (subcommand == "all") {
    driver.run_all();
    std::printf("all stages complete; artifacts in %s\n", driver.config().workdir.c_str());
    return 0;
  }
  if (subcommand == "report") {
    std::string table;
    driver.report(&table);
    std::fputs(table.c_str(), stdout);
    return 0;
  }
  auto outcome = driver.run_stage(subcommand);
  std::printf("%s: %s (%.2fs)\n", subcommand.c_str(),
              outcome.status == StageStatus::skipped ? "skipped (up to date)" : "done",
              outcome.seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobiscope: GPS mobility panels and event-study estimation"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  int threads = 0;
  std::uint64_t seed = 0;

  const std::vector<std::string> names{"simulate", "ingest", "stays",  "homes", "profiles",
                                       "panel",    "fit",    "all",    "report"};
  std::string chosen;
  for (const auto& name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "pipeline config file")->required();
    sub->add_flag("--force", force, "rerun even when digests are unchanged");
    sub->add_option("--threads", threads, "worker cap (0 = all cores)");
    auto* seed_opt = sub->add_option("--seed", seed, "scenario seed override (simulate)");
    sub->callback([&chosen, name, seed_opt] {
      chosen = name;
      (void)seed_opt;
    });
  }

  bool has_seed = false;
  try {
    app.parse(argc, argv);
    for (const auto* sub : app.get_subcommands())
      if (sub->count("--seed") > 0) has_seed = true;
    return run(chosen, config_path, force, threads, seed, has_seed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const mobiscope::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const mobiscope::MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 2;
  } catch (const mobiscope::EstimationError& e) {
    std::fprintf(stderr, "estimation error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
