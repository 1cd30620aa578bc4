#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "graphreason/errors.hpp"
#include "graphreason/experiment.hpp"
#include "graphreason/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace graphreason;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out = ".";
};

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.config.empty() ? ExperimentConfig{} : load_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  return cfg;
}

fs::path out_dir(const CommonFlags& flags) {
  fs::path dir = flags.out;
  fs::create_directories(dir);
  return dir;
}

fs::path checkpoint_path(const CommonFlags& flags) {
  return flags.checkpoint.empty() ? fs::path(flags.out) / "model.ckpt" : fs::path(flags.checkpoint);
}

Dataset require_dataset(const ExperimentConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("data_dir is not set; run gen-data and set data_dir in the config");
  if (!fs::exists(cfg.data_dir)) throw ConfigError("data_dir does not exist: " + cfg.data_dir);
  return load_dataset(cfg.data_dir);
}

Model load_trained(const ExperimentConfig& cfg, const Dataset& data, const CommonFlags& flags) {
  Model model = build_model(cfg, data);
  const fs::path path = checkpoint_path(flags);
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  load_checkpoint(path, model, nullptr, config_digest(cfg));
  return model;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

int cmd_gradcheck(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  SuiteOptions options;
  options.seeds = cfg.gradcheck_seeds;
  options.corrupt_op = cfg.gradcheck_corrupt_op;
  bool all = true;
  for (const auto& entry : run_gradcheck_suite(options)) {
    std::cout << format_suite_entry(entry) << "\n";
    all = all && entry.passed();
  }
  std::cout << (all ? "gradcheck: all operations passed" : "gradcheck: FAILED") << "\n";
  return all ? 0 : 1;
}

int cmd_gen_data(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  const fs::path dir = flags.out != "." || cfg.data_dir.empty() ? fs::path(flags.out) : fs::path(cfg.data_dir);
  const Dataset data = generate_dataset(cfg.spec, cfg.n_scenes, cfg.data_seed, cfg.split);
  save_dataset(dir, data);
  std::cout << "wrote " << data.train.size() << " train, " << data.val.size() << " val, " << data.test.size()
            << " test scenes to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Dataset data = require_dataset(cfg);
  const fs::path dir = out_dir(flags);
  std::ofstream log(dir / "train.log");
  TrainOptions options;
  options.log = &log;
  options.checkpoint = checkpoint_path(flags);
  const TrainResult result = train(cfg, data, options);
  write_file(dir / "config.cfg", canonical_config(cfg));
  std::cout << "trained " << result.steps << " steps, final loss " << result.last_loss << ", checkpoint "
            << options.checkpoint->string() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Dataset data = require_dataset(cfg);
  const Model model = load_trained(cfg, data, flags);
  std::optional<DropProtocol> drop;
  if (cfg.drop_enabled) drop = cfg.drop;
  const MetricReport report = evaluate(model, cfg, data, data.test, drop);
  write_file(out_dir(flags) / "metrics.tsv", format_metric_lines(report));
  std::cout << format_report(report, data.vocab.names());
  return 0;
}

int cmd_sweep(const CommonFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  const Dataset data = require_dataset(cfg);
  const Model model = load_trained(cfg, data, flags);
  const auto rows = sweep(model, cfg, data, data.test, cfg.sweep_deltas);
  const std::string csv = sweep_csv(rows);
  write_file(out_dir(flags) / "sweep.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_report(const CommonFlags& flags) {
  const fs::path dir = flags.out;
  bool found = false;
  for (const char* name : {"metrics.tsv", "sweep.csv"}) {
    std::ifstream in(dir / name);
    if (!in) continue;
    found = true;
    std::cout << "# " << name << "\n";
    std::string line;
    while (std::getline(in, line)) {
      if (std::string(name) == "metrics.tsv") {
        const auto tab = line.find('\t');
        if (tab != std::string::npos) line = line.substr(0, tab) + " = " + line.substr(tab + 1);
      }
      std::cout << line << "\n";
    }
  }
  if (!found) throw ConfigError("no metrics.tsv or sweep.csv in " + dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative region reasoning: training, evaluation and checks"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "overrides the configured seed");
    sub->add_option("--checkpoint", flags.checkpoint, "checkpoint path (default: OUT/model.ckpt)");
    sub->add_option("--out", flags.out, "output directory");
  };
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const CommonFlags&);
  };
  const Verb verbs[] = {
      {"gradcheck", "finite-difference check of every differentiable operation", cmd_gradcheck},
      {"gen-data", "generate the synthetic benchmark into OUT (or data_dir)", cmd_gen_data},
      {"train", "train a model; writes the checkpoint and OUT/train.log", cmd_train},
      {"eval", "evaluate a checkpoint on the test split; writes OUT/metrics.tsv", cmd_eval},
      {"sweep", "evaluate under the region-drop protocol for every delta; writes OUT/sweep.csv", cmd_sweep},
      {"report", "print the metric lines and sweep CSV found in OUT", cmd_report},
  };
  int (*selected)(const CommonFlags&) = nullptr;
  for (const auto& verb : verbs) {
    CLI::App* sub = app.add_subcommand(verb.name, verb.help);
    add_common(sub);
    sub->callback([&selected, run = verb.run] { selected = run; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return selected(flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
