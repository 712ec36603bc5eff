#include "ndi/errors.hpp"
#include "ndi/pipeline.hpp"
#include "ndi/verify.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

namespace fs = std::filesystem;
namespace pl = ndi::pipeline;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerifyFailed = 2;
constexpr int kDiverged = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string suite = "all";
};

pl::ExperimentConfig resolve(const Options& o) {
  pl::ExperimentConfig c = o.config.empty() ? pl::ExperimentConfig{} : pl::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out_dir = o.out;
  return c;
}

pl::RunPaths paths_for(const pl::ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  return pl::RunPaths::in(c.out_dir, c.seed);
}

void require(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p)) {
    throw std::runtime_error("missing '" + p.string() + "'; run '" + produced_by + "' first");
  }
}

int gen_demos(const Options& o) {
  const auto c = resolve(o);
  const auto paths = paths_for(c);
  const auto demos = pl::generate_demos(c);
  pl::write_demos(demos, paths.demos);
  std::printf("wrote %zu records to %s (expert return %.6g)\n", demos.records.size(),
              paths.demos.c_str(), demos.expert_return);
  return kOk;
}

int fit_density(const Options& o) {
  const auto c = resolve(o);
  const auto paths = paths_for(c);
  require(paths.demos, "gen-demos");
  const auto fit = pl::fit_density(c, pl::read_demos(paths.demos));
  ndi::ckpt::save(fit.checkpoint, paths.density.string());
  std::ofstream curve(paths.density_curve);
  curve << "# config_hash=" << pl::config_hash(c) << "\n# seed=" << c.seed << "\nepoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < fit.curve.epoch_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, fit.curve.epoch_loss[i]);
    curve << buf;
  }
  if (!ndi::density::smoothed_nonincreasing(fit.curve.epoch_loss)) {
    std::fprintf(stderr, "warning: smoothed training loss is not monotone\n");
  }
  std::printf("wrote %s (final loss %.6g)\n", paths.density.c_str(),
              fit.curve.epoch_loss.empty() ? 0.0 : fit.curve.epoch_loss.back());
  return kOk;
}

int train(const Options& o) {
  const auto c = resolve(o);
  const auto paths = paths_for(c);
  require(paths.density, "fit-density");
  const auto result = pl::train(c, ndi::ckpt::load(paths.density.string()), fs::path(c.out_dir));
  const auto& last = result.metrics.back();
  std::printf("selected iteration %zu of %zu; env return %.6g, normalized KL %.6g (last)\n",
              result.selected_iteration, result.metrics.size(), last.env_return,
              last.normalized_kl);
  return kOk;
}

int eval(const Options& o) {
  const auto c = resolve(o);
  const auto paths = paths_for(c);
  require(paths.policy, "train");
  const auto summary = pl::evaluate(c, ndi::ckpt::load(paths.policy.string()));
  const std::string text = summary.to_json();
  std::ofstream(paths.eval) << text << '\n';
  std::cout << text << '\n';
  return kOk;
}

int verify(const Options& o) {
  bool ok = true;
  for (const auto& report : ndi::verify::run_suite(o.suite)) {
    std::cout << ndi::verify::format(report) << '\n';
    ok = ok && report.passed();
  }
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy entropy imitation: demonstrations, density fitting, RL and checks"};
  app.require_subcommand(1);
  Options opt;

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "overrides the config seed");
    sub->add_option("--out", opt.out, "output directory (overrides out_dir)");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"gen-demos", "sample expert demonstrations", gen_demos},
      {"fit-density", "fit the joint density model to the demonstrations", fit_density},
      {"train", "run occupancy entropy RL against the fitted density", train},
      {"eval", "summarize the selected policy", eval},
  };
  int (*selected)(const Options&) = nullptr;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_run_flags(sub);
    sub->callback([&selected, run = cmd.run] { selected = run; });
  }
  auto* v = app.add_subcommand("verify", "run the randomized identity checks");
  std::string suites;
  for (const auto& n : ndi::verify::suite_names()) suites += n + ", ";
  v->add_option("--suite", opt.suite, "one of " + suites + "all")->capture_default_str();
  v->callback([&selected] { selected = verify; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return selected(opt);
  } catch (const ndi::DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
}
