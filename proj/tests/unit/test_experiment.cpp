#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "graphreason/errors.hpp"
#include "graphreason/experiment.hpp"
#include "helpers.hpp"

using namespace graphreason;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.model.memory_dim = 4;
  cfg.model.fc_width = 8;
  cfg.model.pool = 3;
  cfg.model.stacks = 1;
  cfg.model.iterations = 1;
  cfg.steps = 12;
  cfg.decay_step = 8;
  cfg.log_every = 1;
  cfg.n_scenes = 21;
  cfg.seed = 4;
  return cfg;
}

const Dataset& tiny_data() {
  static const Dataset data = generate_dataset(SceneSpec{}, 21, 9);
  return data;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("graphreason_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_report(const MetricReport& a, const MetricReport& b) {
  return a.per_instance_ap == b.per_instance_ap && a.per_instance_ac == b.per_instance_ac &&
         a.per_class_ap == b.per_class_ap && a.per_class_ac == b.per_class_ac && a.regions == b.regions;
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in("# comment\nvariant=local\niterations = 2\nno_reweight=true\nlearning_rate=0.05\n"
                        "sweep_deltas=0,0.5\ndrop_mode=pre\n");
  const ExperimentConfig cfg = parse_config(in);
  CHECK(cfg.model.variant == Variant::kLocal);
  CHECK(cfg.model.iterations == 2);
  CHECK(cfg.model.ablations.no_reweight);
  CHECK(cfg.learning_rate == 0.05);
  CHECK(cfg.sweep_deltas == std::vector<double>{0, 0.5});
  CHECK(cfg.drop.mode == DropMode::kPre);

  std::istringstream typo("no_reweigth=true\n");
  CHECK_THROWS_AS(parse_config(typo), ConfigError);
  std::istringstream bad_value("iterations=two\n");
  CHECK_THROWS_AS(parse_config(bad_value), ConfigError);
  std::istringstream bad_variant("variant=huge\n");
  CHECK_THROWS_AS(parse_config(bad_variant), ConfigError);

  std::istringstream round(canonical_config(cfg));
  CHECK(canonical_config(parse_config(round)) == canonical_config(cfg));
}

TEST_CASE("config digest covers parameter-determining keys only") {
  const ExperimentConfig base = tiny_config();
  ExperimentConfig other = base;
  other.log_every = 77;
  other.data_dir = "/elsewhere";
  CHECK(config_digest(other) == config_digest(base));
  other.model.memory_dim = 5;
  CHECK(config_digest(other) != config_digest(base));
  other = base;
  other.seed = 5;
  CHECK(config_digest(other) != config_digest(base));
}

TEST_CASE("relative data_dir resolves against the config file") {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "run.cfg") << "data_dir=data\n";
  CHECK(fs::path(load_config(dir / "run.cfg").data_dir) == (dir / "data").lexically_normal());
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), ConfigError);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const fs::path dir = scratch("train");
  const ExperimentConfig cfg = tiny_config();
  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  opts.checkpoint = dir / "a.ckpt";
  const TrainResult a = train(cfg, tiny_data(), opts);
  opts.log = nullptr;
  opts.checkpoint = dir / "b.ckpt";
  train(cfg, tiny_data(), opts);
  CHECK(a.steps == 12);
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK(fs::exists(dir / "a.ckpt.decay"));

  const std::string first = log.str().substr(0, log.str().find('\n'));
  CHECK(first.rfind("step=0 ", 0) == 0);
  const double loss0 = std::stod(first.substr(first.find("loss=") + 5));
  CHECK(loss0 == doctest::Approx(4 * std::log(8.0)).epsilon(1e-12));
  CHECK(first.find("attention=plain0:") != std::string::npos);

  Model fresh = build_model(cfg, tiny_data());
  OptimizerState opt;
  CHECK(load_checkpoint(dir / "a.ckpt", fresh, &opt, config_digest(cfg)) == 12);
  CHECK(same_report(evaluate(fresh, cfg, tiny_data(), tiny_data().test),
                    evaluate(a.model, cfg, tiny_data(), tiny_data().test)));

  ExperimentConfig other = cfg;
  other.seed = 99;
  try {
    load_checkpoint(dir / "a.ckpt", fresh, nullptr, config_digest(other));
    FAIL("digest mismatch accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("refusing") != std::string::npos);
  }
}

TEST_CASE("non-finite loss aborts training") {
  ExperimentConfig cfg = tiny_config();
  cfg.learning_rate = 1e150;
  cfg.steps = 50;
  CHECK_THROWS_AS(train(cfg, tiny_data()), EvaluationError);
}

TEST_CASE("evaluation under region drop") {
  ExperimentConfig cfg = tiny_config();
  const TrainResult trained = train(cfg, tiny_data());
  const auto& test = tiny_data().test;
  const MetricReport plain = evaluate(trained.model, cfg, tiny_data(), test);
  CHECK_FALSE(plain.recall.has_value());

  const std::vector<double> deltas{0, 0.3, 0.5, 0.8, 0.9};
  const auto rows = sweep(trained.model, cfg, tiny_data(), test, deltas);
  REQUIRE(rows.size() == 10);
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(rows[m * 5].mode == (m == 0 ? DropMode::kPre : DropMode::kPost));
    CHECK(same_report(rows[m * 5].report, plain));
    CHECK(*rows[m * 5].report.recall == 1.0);
    for (std::size_t i = 1; i < 5; ++i) CHECK(*rows[m * 5 + i].report.recall <= *rows[m * 5 + i - 1].report.recall);
  }
  const std::string csv = sweep_csv(rows);
  CHECK(csv.rfind("delta,mode,recall,per_instance_ap,per_instance_ac,per_class_ap,per_class_ac\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(sweep_csv(sweep(trained.model, cfg, tiny_data(), test, deltas)) == csv);

  cfg.model.variant = Variant::kBaseline;
  const TrainResult base = train(cfg, tiny_data());
  DropProtocol pre, post;
  pre.delta = post.delta = 0.5;
  pre.mode = DropMode::kPre;
  post.mode = DropMode::kPost;
  CHECK(same_report(evaluate(base.model, cfg, tiny_data(), test, pre), evaluate(base.model, cfg, tiny_data(), test, post)));
}

TEST_CASE("every ablation flag builds a runnable model") {
  const ExperimentConfig base = tiny_config();
  for (bool Ablations::*flag : {&Ablations::no_reweight, &Ablations::no_cross_feed, &Ablations::no_spatial_path,
                                &Ablations::no_semantic_path, &Ablations::no_spatial_memory, &Ablations::no_global_memory,
                                &Ablations::no_graph_reasoner, &Ablations::no_local_convs}) {
    ExperimentConfig cfg = base;
    cfg.steps = 3;
    cfg.model.ablations.*flag = true;
    const TrainResult r = train(cfg, tiny_data());
    CHECK(std::isfinite(r.last_loss));
  }
}
