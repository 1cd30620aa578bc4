#include "graphreason/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "graphreason/encoding.hpp"
#include "graphreason/errors.hpp"
#include "graphreason/knowledge_graph.hpp"
#include "graphreason/log.hpp"

namespace graphreason {

namespace {

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean '" + text + "' for key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  const char* key;
  bool digest;  // affects trained parameters
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define GR_SIZE(name, member, in_digest)                                                              \
  Field{name, in_digest, [](const ExperimentConfig& c) { return std::to_string(c.member); },        \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_value<std::size_t>(name, v); }}
#define GR_U64(name, member, in_digest)                                                               \
  Field{name, in_digest, [](const ExperimentConfig& c) { return std::to_string(c.member); },        \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_value<std::uint64_t>(name, v); }}
#define GR_REAL(name, member, in_digest)                                                               \
  Field{name, in_digest, [](const ExperimentConfig& c) { return number(static_cast<double>(c.member)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_value<double>(name, v); }}
#define GR_FLAG(name, member, in_digest)                                                              \
  Field{name, in_digest, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"variant", true, [](const ExperimentConfig& c) { return std::string(variant_name(c.model.variant)); },
            [](ExperimentConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
      GR_SIZE("iterations", model.iterations, true),
      GR_SIZE("memory_dim", model.memory_dim, true),
      GR_SIZE("fc_width", model.fc_width, true),
      GR_SIZE("pool", model.pool, true),
      GR_SIZE("stacks", model.stacks, true),
      Field{"gru_candidate", true,
            [](const ExperimentConfig& c) { return std::string(ops::activation_name(c.model.gru_candidate)); },
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.model.gru_candidate = ops::parse_activation(v);
              } catch (const std::exception&) {
                throw ConfigError("bad value '" + v + "' for key 'gru_candidate'");
              }
            }},
      GR_REAL("bandwidth_fraction", model.bandwidth_fraction, true),
      GR_FLAG("no_reweight", model.ablations.no_reweight, true),
      GR_FLAG("no_cross_feed", model.ablations.no_cross_feed, true),
      GR_FLAG("no_spatial_path", model.ablations.no_spatial_path, true),
      GR_FLAG("no_semantic_path", model.ablations.no_semantic_path, true),
      GR_FLAG("no_spatial_memory", model.ablations.no_spatial_memory, true),
      GR_FLAG("no_global_memory", model.ablations.no_global_memory, true),
      GR_FLAG("no_graph_reasoner", model.ablations.no_graph_reasoner, true),
      GR_FLAG("no_local_convs", model.ablations.no_local_convs, true),
      GR_REAL("beta", loss.beta, true),
      GR_REAL("loss_plain_weight", loss.plain_weight, true),
      GR_REAL("loss_local_weight", loss.local_weight, true),
      GR_REAL("loss_global_weight", loss.global_weight, true),
      GR_REAL("loss_fused_weight", loss.fused_weight, true),
      GR_REAL("learning_rate", learning_rate, true),
      GR_REAL("momentum", momentum, true),
      GR_REAL("weight_decay", weight_decay, true),
      GR_REAL("grad_clip", grad_clip, true),
      GR_SIZE("steps", steps, true),
      GR_SIZE("decay_step", decay_step, true),
      GR_SIZE("log_every", log_every, false),
      GR_U64("seed", seed, true),
      Field{"data_dir", false, [](const ExperimentConfig& c) { return c.data_dir; },
            [](ExperimentConfig& c, const std::string& v) { c.data_dir = v; }},
      GR_SIZE("grid_h", spec.grid_h, false),
      GR_SIZE("grid_w", spec.grid_w, false),
      GR_REAL("cell_px", spec.cell_px, false),
      GR_SIZE("classes", spec.classes, false),
      GR_SIZE("feature_dim", spec.feature_dim, false),
      GR_SIZE("min_regions", spec.min_regions, false),
      GR_SIZE("max_regions", spec.max_regions, false),
      GR_REAL("ambiguity", spec.ambiguity, false),
      GR_REAL("noise", spec.noise, false),
      GR_SIZE("chain_min", spec.chain_min, false),
      GR_SIZE("chain_max", spec.chain_max, false),
      GR_U64("world_seed", spec.seed, false),
      GR_SIZE("n_scenes", n_scenes, false),
      GR_REAL("val_fraction", split.val, false),
      GR_REAL("test_fraction", split.test, false),
      GR_U64("data_seed", data_seed, false),
      GR_FLAG("drop_enabled", drop_enabled, false),
      GR_REAL("drop_delta", drop.delta, false),
      GR_REAL("drop_jitter", drop.jitter, false),
      GR_SIZE("drop_proposals", drop.proposals_per_box, false),
      Field{"drop_mode", false, [](const ExperimentConfig& c) { return drop_mode_name(c.drop.mode); },
            [](ExperimentConfig& c, const std::string& v) { c.drop.mode = parse_drop_mode(v); }},
      GR_U64("drop_seed", drop_seed, false),
      Field{"sweep_deltas", false,
            [](const ExperimentConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.sweep_deltas.size(); ++i) out += (i ? "," : "") + number(c.sweep_deltas[i]);
              return out;
            },
            [](ExperimentConfig& c, const std::string& v) {
              c.sweep_deltas.clear();
              std::stringstream in(v);
              std::string item;
              while (std::getline(in, item, ',')) c.sweep_deltas.push_back(parse_value<double>("sweep_deltas", trim(item)));
            }},
      GR_SIZE("gradcheck_seeds", gradcheck_seeds, false),
      Field{"gradcheck_corrupt_op", false, [](const ExperimentConfig& c) { return c.gradcheck_corrupt_op; },
            [](ExperimentConfig& c, const std::string& v) { c.gradcheck_corrupt_op = v; }},
  };
  return table;
}

#undef GR_SIZE
#undef GR_U64
#undef GR_REAL
#undef GR_FLAG

void write_tensor(std::ostream& out, const Tensor& t) {
  out << t.rank();
  for (auto e : t.shape()) out << ' ' << e;
  for (auto v : t.data()) out << ' ' << encode_double(static_cast<double>(v));
  out << '\n';
}

std::vector<Scalar> read_values(std::istream& in, const Shape& expected, const std::string& name) {
  std::size_t rank = 0;
  in >> rank;
  Shape shape(rank);
  for (auto& e : shape) in >> e;
  if (!in || shape != expected) {
    throw LoadError("checkpoint tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
                    shape_string(expected));
  }
  std::vector<Scalar> values(shape_size(shape));
  std::string hex;
  for (auto& v : values) {
    in >> hex;
    v = static_cast<Scalar>(decode_double(hex));
  }
  if (!in) throw LoadError("checkpoint tensor " + name + " is truncated");
  return values;
}

std::string expect_word(std::istream& in, const std::string& word) {
  std::string got;
  in >> got;
  if (got != word) throw LoadError("checkpoint: expected '" + word + "', found '" + got + "'");
  return got;
}

}  // namespace

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    try {
      apply_setting(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  ExperimentConfig cfg = parse_config(in);
  // Relative data paths resolve against the config file's directory.
  if (!cfg.data_dir.empty() && std::filesystem::path(cfg.data_dir).is_relative()) {
    cfg.data_dir = (path.parent_path() / cfg.data_dir).lexically_normal().string();
  }
  return cfg;
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
  return out;
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  Fnv1a h;
  for (const auto& f : fields()) {
    if (f.digest) h.update(std::string(f.key) + "=" + f.get(cfg) + "\n");
  }
  return h.value();
}

ModelConfig resolved_model_config(const ExperimentConfig& cfg, const SceneSpec& spec) {
  ModelConfig m = cfg.model;
  m.classes = spec.classes;
  m.feature_dim = spec.feature_dim;
  std::uint64_t s = cfg.seed;
  m.seed = splitmix64(s);
  return m;
}

Model build_model(const ExperimentConfig& cfg, const Dataset& data) {
  return Model::create(resolved_model_config(cfg, data.spec), data.graph.types.size());
}

LossConfig effective_loss(const ExperimentConfig& cfg) {
  LossConfig loss = cfg.loss;
  if (cfg.model.ablations.no_reweight) loss.beta = 1;
  return loss;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& optimizer,
                     std::size_t step, std::uint64_t digest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out << "graphreason-checkpoint 1\n";
  out << "digest " << hex64(digest) << '\n';
  out << "step " << step << '\n';
  out << "optimizer " << encode_double(optimizer.learning_rate) << ' ' << encode_double(optimizer.momentum) << ' '
      << encode_double(optimizer.weight_decay) << ' ' << optimizer.velocity.size() << '\n';
  const auto& entries = model.params.entries();
  out << "params " << entries.size() << '\n';
  for (const auto& [name, t] : entries) {
    out << name << ' ';
    write_tensor(out, t);
  }
  for (std::size_t i = 0; i < optimizer.velocity.size(); ++i) {
    out << "velocity " << entries.at(i).first << ' ';
    write_tensor(out, optimizer.velocity[i]);
  }
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

std::size_t load_checkpoint(const std::filesystem::path& path, Model& model, OptimizerState* optimizer,
                            std::uint64_t expected_digest) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "graphreason-checkpoint" || version != 1) throw LoadError(path.string() + " is not a checkpoint");
  expect_word(in, "digest");
  std::string digest_hex;
  in >> digest_hex;
  if (digest_hex != hex64(expected_digest)) {
    throw ConfigError("refusing checkpoint " + path.string() + ": config digest " + digest_hex +
                      " does not match the current config (" + hex64(expected_digest) + ")");
  }
  expect_word(in, "step");
  std::size_t step = 0;
  in >> step;
  expect_word(in, "optimizer");
  std::string lr, mom, wd;
  std::size_t n_velocity = 0;
  in >> lr >> mom >> wd >> n_velocity;
  expect_word(in, "params");
  std::size_t n_params = 0;
  in >> n_params;
  const auto& entries = model.params.entries();
  if (n_params != entries.size()) {
    throw LoadError("checkpoint has " + std::to_string(n_params) + " parameters, model " +
                    std::to_string(entries.size()));
  }
  std::vector<std::vector<Scalar>> values;
  for (const auto& [name, t] : entries) {
    std::string stored;
    in >> stored;
    if (stored != name) throw LoadError("checkpoint parameter '" + stored + "' where '" + name + "' was expected");
    values.push_back(read_values(in, t.shape(), name));
  }
  std::vector<Tensor> velocity;
  for (std::size_t i = 0; i < n_velocity; ++i) {
    expect_word(in, "velocity");
    std::string stored;
    in >> stored;
    const Tensor& p = entries.at(i).second;
    velocity.emplace_back(p.shape(), read_values(in, p.shape(), stored));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor handle = entries[i].second;
    std::copy(values[i].begin(), values[i].end(), handle.data().begin());
  }
  if (optimizer) {
    optimizer->learning_rate = static_cast<Scalar>(decode_double(lr));
    optimizer->momentum = static_cast<Scalar>(decode_double(mom));
    optimizer->weight_decay = static_cast<Scalar>(decode_double(wd));
    optimizer->velocity = std::move(velocity);
  }
  return step;
}

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& options) {
  if (data.train.empty()) throw ConfigError("training split is empty");
  TrainResult result{build_model(cfg, data), {}, 0, 0};
  Model& model = result.model;
  OptimizerState& opt = result.optimizer;
  opt.learning_rate = static_cast<Scalar>(cfg.learning_rate);
  opt.momentum = static_cast<Scalar>(cfg.momentum);
  opt.weight_decay = static_cast<Scalar>(cfg.weight_decay);
  if (!(cfg.grad_clip >= 0)) throw ConfigError("grad_clip must be non-negative");
  opt.clip_norm = static_cast<Scalar>(cfg.grad_clip);
  const LossConfig loss_cfg = effective_loss(cfg);
  const std::uint64_t digest = config_digest(cfg);
  const auto kg = knowledge_graph_tensors(data.graph);

  std::vector<SceneContext> contexts;
  contexts.reserve(data.train.size());
  for (const auto& s : data.train) contexts.push_back(prepare_scene(s, model.config, kg));

  Rng order_rng(cfg.seed ^ 0x6f72646572ULL);
  std::vector<std::size_t> order(data.train.size());
  std::vector<Tensor> params = model.params.tensors();
  Tape tape;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t pos = step % order.size();
    if (pos == 0) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(order_rng)]);
      }
    }
    if (cfg.decay_step > 0 && step == cfg.decay_step) {
      if (options.checkpoint) {
        save_checkpoint(options.checkpoint->string() + ".decay", model, opt, step, digest);
      }
      opt.learning_rate = static_cast<Scalar>(cfg.learning_rate * 0.1);
    }
    const Scene& scene = data.train[order[pos]];
    tape.reset();
    LossBreakdown loss;
    RolloutState state;
    const std::string where = " at step " + std::to_string(step) + " on scene " + scene.id;
    try {
      TapeScope scope(tape);
      state = rollout(model, scene, contexts[order[pos]], model.config.iterations);
      loss = total_loss(state, scene.labels, loss_cfg);
      model.params.zero_grads();
      tape.backward(loss.total);
    } catch (const EvaluationError& e) {
      throw EvaluationError(std::string(e.what()) + where + "; lower learning_rate or check the data");
    }
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      throw EvaluationError("non-finite loss " + number(value) + where + "; lower learning_rate or check the data");
    }
    const double grad_norm = sgd_step(params, opt);
    result.last_loss = value;
    result.steps = step + 1;
    if (options.log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      std::ostream& log = *options.log;
      log << "step=" << step << " loss=" << number(value) << " plain=" << number(loss.plain);
      for (std::size_t i = 0; i < loss.local.size(); ++i) log << " local" << i + 1 << '=' << number(loss.local[i]);
      for (std::size_t i = 0; i < loss.global.size(); ++i) log << " global" << i + 1 << '=' << number(loss.global[i]);
      log << " fused=" << number(loss.fused) << " grad_norm=" << number(grad_norm) << " attention=";
      NoGradScope no_grad;
      const Tensor w = fusion_weights(state.records);
      const std::size_t r = w.dim(0), n = w.dim(1);
      for (std::size_t k = 0; k < n; ++k) {
        double mean = 0;
        for (std::size_t i = 0; i < r; ++i) mean += w[i * n + k];
        log << (k ? "," : "") << source_name(state.records[k].source) << state.records[k].iteration << ':'
            << number(std::round(mean / static_cast<double>(r) * 1e4) / 1e4);
      }
      log << '\n';
    }
  }
  if (options.checkpoint) save_checkpoint(*options.checkpoint, model, opt, result.steps, digest);
  return result;
}

MetricReport evaluate(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                      std::span<const Scene> scenes, const std::optional<DropProtocol>& drop) {
  NoGradScope no_grad;
  const auto kg = knowledge_graph_tensors(data.graph);
  const std::size_t c = model.config.classes;
  std::vector<double> scores;
  std::vector<std::size_t> labels;
  std::size_t total = 0, kept_total = 0;
  for (const auto& scene : scenes) {
    total += scene.regions();
    std::vector<std::size_t> keep(scene.regions());
    std::iota(keep.begin(), keep.end(), 0);
    if (drop) keep = drop_regions(scene, *drop, cfg.drop_seed ^ fnv1a64(scene.id)).kept;
    kept_total += keep.size();
    if (keep.empty()) continue;
    const bool pre = drop && drop->mode == DropMode::kPre;
    const Scene input = pre ? scene.subset(keep) : scene;
    const RolloutState state = rollout(model, input, prepare_scene(input, model.config, kg), model.config.iterations);
    const Tensor& p = state.fused.probs;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const std::size_t row = pre ? k : keep[k];
      for (std::size_t j = 0; j < c; ++j) scores.push_back(p[row * c + j]);
      labels.push_back(scene.labels[keep[k]]);
    }
  }
  if (labels.empty() && !drop) throw EvaluationError("no regions to evaluate");
  MetricReport report;
  if (labels.empty()) {
    // Every region was dropped: the metrics are undefined.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.per_instance_ap = report.per_instance_ac = report.per_class_ap = report.per_class_ac = nan;
    report.classes.assign(c, ClassMetrics{});
  } else {
    report = aggregate(scores, c, labels);
  }
  if (drop) report.recall = total ? static_cast<double>(kept_total) / static_cast<double>(total) : 1.0;
  return report;
}

std::vector<SweepRow> sweep(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                            std::span<const Scene> scenes, std::span<const double> deltas) {
  std::vector<SweepRow> rows;
  for (DropMode mode : {DropMode::kPre, DropMode::kPost}) {
    for (double d : deltas) rows.push_back({d, mode, {}});
  }
  parallel_for(rows.size(), [&](std::size_t i) {
    DropProtocol p = cfg.drop;
    p.delta = rows[i].delta;
    p.mode = rows[i].mode;
    rows[i].report = evaluate(model, cfg, data, scenes, p);
  });
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "delta,mode,recall,per_instance_ap,per_instance_ac,per_class_ap,per_class_ac\n";
  for (const auto& r : rows) {
    out << number(r.delta) << ',' << drop_mode_name(r.mode) << ',' << number(r.report.recall.value_or(1.0)) << ','
        << number(r.report.per_instance_ap) << ',' << number(r.report.per_instance_ac) << ','
        << number(r.report.per_class_ap) << ',' << number(r.report.per_class_ac) << '\n';
  }
  return out.str();
}

std::size_t worker_limit() {
  if (const char* env = std::getenv("GRAPHREASON_THREADS")) {
    std::size_t n = 0;
    const std::string_view text(env);
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec == std::errc() && ptr == text.data() + text.size() && n > 0) return n;
    warn("ignoring GRAPHREASON_THREADS='" + std::string(text) + "'");
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_limit(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace graphreason
