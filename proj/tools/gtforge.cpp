#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gtforge/errors.hpp"
#include "gtforge/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string pairs;
  std::string out;
  std::string predictions;
  std::string method = "sgm";
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  int stage = 1;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace gtforge;
  using Command = std::function<int(const PipelineConfig&, const CommandOptions&)>;

  CLI::App app{"gtforge: LiDAR ground truth for epipolar aerial stereo pairs"};
  app.require_subcommand(1);
  Common c;
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"pairs", "enumerate overlapping stereo pairs", cmd_pairs},
      {"register", "refine camera poses against the LiDAR cloud", cmd_register},
      {"gen-gt", "generate sparse ground truth for active pairs", cmd_gen_gt},
      {"match", "run the SGM baseline on active pairs", cmd_match},
      {"filter", "drop changed pairs by baseline or trained-model error", cmd_filter},
      {"eval", "evaluate disparity predictions", cmd_eval},
      {"synth", "write a synthetic dataset", cmd_synth},
      {"report", "summarize the manifest and training compositions", cmd_report},
  };
  std::map<const CLI::App*, Command> handlers;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", c.config, "pipeline config (JSON)")->required();
    sub->add_option("--pairs", c.pairs, "pair manifest path");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--workers", c.workers, "worker count")->check(CLI::PositiveNumber);
    sub->add_option("--seed", c.seed, "random seed");
    if (name == "filter") sub->add_option("--stage", c.stage, "filter stage (1 or 2)");
    if (name == "filter" || name == "eval" || name == "match")
      sub->add_option("--predictions", c.predictions, "prediction directory");
    if (name == "eval") sub->add_option("--method", c.method, "label of the evaluated method");
    handlers.emplace(sub, fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = load_config(c.config);
    if (!c.out.empty()) cfg.output = c.out;
    if (c.seed) cfg.seed = *c.seed;
    cfg.workers = c.workers ? *c.workers : resolve_workers(cfg.workers);
    cfg.validate();

    CommandOptions opts;
    if (!c.pairs.empty()) opts.manifest = c.pairs;
    if (!c.predictions.empty()) opts.predictions = c.predictions;
    opts.stage = c.stage;
    opts.method = c.method;
    return handlers.at(app.get_subcommands().front())(cfg, opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
