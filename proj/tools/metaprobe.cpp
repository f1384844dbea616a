#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "metaprobe/error.hpp"
#include "metaprobe/pipeline.hpp"

namespace mp = metaprobe::pipeline;

namespace {

constexpr int kExitError = 1;
constexpr int kExitGaps = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
};

mp::RunConfig resolve(const Globals& g) {
  mp::RunConfig c;
  if (!g.config.empty()) c = mp::load_config(g.config);
  if (g.seed) {
    const auto s = *g.seed;
    c.seeds = {s, s, s, s, s};
    c.synthetic.seed = s;
    c.pik.seed = s;
  }
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

int report_exit(const std::vector<std::string>& gaps) {
  for (const auto& g : gaps) std::cerr << "report gap: " << g << '\n';
  return gaps.empty() ? 0 : kExitGaps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verify-then-correct probing, baselines and causal interventions"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Overrides every seed in the configuration");
  app.add_option("--out", g.out, "Run directory (overrides output_dir)");
  app.add_flag("--resume", g.resume, "Skip stages whose inputs and outputs are unchanged");

  struct Sub {
    const char* name;
    std::optional<mp::Stage> stage;
    const char* help;
  };
  const Sub subs[] = {
      {"phases", mp::Stage::kPhases, "Run Phase 0-2 trials for the cohort (and the transfer cohort)"},
      {"foil", mp::Stage::kFoil, "Run foil-condition trials"},
      {"capture", mp::Stage::kCapture, "Capture Phase-1 activations on the configured grid"},
      {"pik", mp::Stage::kPik, "Estimate P(IK) by temperature sampling"},
      {"sweep", mp::Stage::kSweep, "Cross-validated probe sweep over positions and layers"},
      {"probe", mp::Stage::kProbe, "Headline probes, behavioural baselines, LR tests, transfer, controls"},
      {"causal", mp::Stage::kCausal, "Activation patching and mean ablation sweeps"},
      {"report", std::nullopt, "Rebuild report tables from stored outputs"},
      {"synth-demo", std::nullopt, "Run every stage on the synthetic backend"},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> registered;
  for (const auto& s : subs) registered.push_back({app.add_subcommand(s.name, s.help), &s});

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    for (const auto& [cmd, sub] : registered) {
      if (!cmd->parsed()) continue;
      const std::string name = sub->name;
      auto cfg = resolve(g);
      if (name == "report") {
        mp::RunLock lock(cfg.output_dir);
        const auto r = mp::emit_report(cfg.output_dir);
        for (const auto& f : r.files) std::cout << f.string() << '\n';
        return report_exit(r.gaps);
      }
      mp::RunOptions opts;
      opts.resume = g.resume;
      opts.log = &std::cerr;
      if (name == "synth-demo") {
        if (g.config.empty() && !cfg.transfer_task) cfg.transfer_task = metaprobe::paradigm::Task::kMnli;
        if (g.out.empty() && g.config.empty()) cfg.output_dir = "runs/synth-demo";
      } else {
        opts.stages = {*sub->stage};
      }
      const auto summary = mp::run_pipeline(cfg, opts);
      std::cout << summary.run_dir.string() << '\n';
      return name == "synth-demo" ? report_exit(summary.report_gaps) : 0;
    }
  } catch (const metaprobe::Error& e) {
    std::cerr << "error: " << e.what();
    if (!e.detail().empty()) std::cerr << " [" << e.detail() << "]";
    std::cerr << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
