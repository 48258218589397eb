// Command-line front end for the EIT inversion pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "eit/error.hpp"
#include "eit/pipeline.hpp"
#include "eit/version.hpp"

namespace {

enum Exit { ok = 0, config_error = 2, numerical_error = 3, stale_manifest = 4 };

int exit_code(const eit::Error& e) {
  switch (e.category()) {
    case eit::Error::Category::numerical: return numerical_error;
    case eit::Error::Category::stale_manifest: return stale_manifest;
    case eit::Error::Category::config:
    case eit::Error::Category::parse: return config_error;
  }
  return config_error;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> replicas;
  bool allow_inverse_crime = false;
  bool force = false;
};

eit::pipeline::RunConfig resolve(const Options& o) {
  eit::pipeline::RunConfig c = eit::pipeline::load_config(o.config);
  if (o.seed) c.chain.seed = *o.seed;
  if (o.out) c.output = *o.out;
  if (o.replicas) c.replicas = *o.replicas;
  c.allow_inverse_crime = o.allow_inverse_crime;
  c.force = o.force;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian EIT inversion under the complete electrode model"};
  app.set_version_flag("--version", eit::version);
  app.require_subcommand(1, 1);

  Options opts;
  using Stage = std::function<void(const eit::pipeline::RunConfig&)>;
  const std::pair<const char*, Stage> stages[] = {
      {"mesh", eit::pipeline::stage_mesh},
      {"make-truth", eit::pipeline::stage_make_truth},
      {"make-data", eit::pipeline::stage_make_data},
      {"run", eit::pipeline::stage_run},
      {"diagnose", eit::pipeline::stage_diagnose},
      {"report", eit::pipeline::stage_report},
      {"all", eit::pipeline::run_all},
  };
  const char* help[] = {
      "build the data (fine) and inversion (coarse) meshes",
      "construct the true conductivity on the data mesh",
      "simulate noisy electrode voltages on the data mesh",
      "run the MCMC chains on the inversion mesh",
      "effective sample sizes, densities and misfit table",
      "rasters and summary report",
      "every stage in order",
  };
  Stage selected;
  for (std::size_t i = 0; i < std::size(stages); ++i) {
    CLI::App* sub = app.add_subcommand(stages[i].first, help[i]);
    sub->add_option("--config", opts.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "override the chain seed");
    sub->add_option("--out", opts.out, "override the output directory");
    sub->add_option("--replicas", opts.replicas, "number of independent chains")->check(CLI::PositiveNumber);
    sub->add_flag("--allow-inverse-crime", opts.allow_inverse_crime, "permit identical data and inversion meshes");
    sub->add_flag("--force", opts.force, "overwrite or reuse artifacts from a different configuration");
    sub->callback([&selected, &stages, i] { selected = stages[i].second; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    selected(resolve(opts));
  } catch (const eit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return config_error;
  }
  return ok;
}
