#include "graphreason/gradcheck_suite.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <memory>
#include <random>

#include "graphreason/errors.hpp"
#include "graphreason/global_reasoning.hpp"
#include "graphreason/local_reasoning.hpp"
#include "graphreason/model.hpp"
#include "graphreason/ops.hpp"
#include "graphreason/params.hpp"
#include "graphreason/rollout.hpp"

namespace graphreason {

namespace {

struct Setup {
  std::function<Tensor()> objective;
  std::vector<Tensor> params;
};

using Builder = std::function<Setup(Rng&)>;

struct Case {
  std::string name;
  Builder build;
};

Tensor rand(Shape shape, Rng& rng, double stddev = 1.0) { return normal_param(std::move(shape), stddev, rng); }

Tensor rand_const(Shape shape, Rng& rng) {
  Tensor t = rand(std::move(shape), rng);
  t.set_requires_grad(false);
  return t;
}

// Contracts the output with fixed random weights, so every output
// coordinate reaches the scalar with a distinct factor.
template <typename Op>
Setup projected(Rng& rng, std::vector<Tensor> params, Op op) {
  Tensor probe;
  {
    NoGradScope no_grad;
    probe = op();
  }
  Tensor w = rand_const(probe.shape(), rng);
  return {[w, op] { return ops::sum(ops::mul(op(), w)); }, std::move(params)};
}

Setup unary(Rng& rng, Shape shape, std::function<Tensor(const Tensor&)> op) {
  Tensor x = rand(std::move(shape), rng);
  return projected(rng, {x}, [x, op] { return op(x); });
}

Box random_box(Rng& rng, double h, double w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double bw = 1.0 + u(rng) * (w - 1.0), bh = 1.0 + u(rng) * (h - 1.0);
  const double x1 = u(rng) * (w - bw), y1 = u(rng) * (h - bh);
  return {x1, y1, x1 + bw, y1 + bh};
}

void randomize(const ParameterSet& params, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (const auto& [name, t] : params.entries()) {
    Tensor handle = t;
    for (auto& v : handle.data()) v = static_cast<Scalar>(dist(rng));
  }
}

// Three non-overlapping regions on a 6x6 grid of 4-pixel cells.
Scene tiny_scene(Rng& rng, std::size_t dh, std::size_t classes) {
  Scene s;
  s.id = "gradcheck";
  s.features = rand_const({6, 6, dh}, rng);
  s.height = 24;
  s.width = 24;
  s.boxes = {{0, 0, 8, 12}, {12, 0, 24, 8}, {4, 16, 20, 24}};
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  for (std::size_t r = 0; r < 3; ++r) s.labels.push_back(label(rng));
  return s;
}

std::vector<Tensor> random_graph(Rng& rng, std::size_t classes, std::size_t types) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < types; ++t) {
    Tensor a({classes, classes});
    for (auto& v : a.data()) v = u(rng) < 0.5 ? static_cast<Scalar>(u(rng)) : Scalar{0};
    out.push_back(a);
  }
  return out;
}

Tensor random_probs(Rng& rng, std::size_t rows, std::size_t cols) {
  NoGradScope no_grad;
  return ops::softmax_rows(rand_const({rows, cols}, rng)).detach();
}

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back({"matmul", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng), b = rand({4, 2}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::matmul(a, b); });
               }});
  c.push_back({"add", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng), b = rand({3, 4}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::add(a, b); });
               }});
  c.push_back({"sub", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng), b = rand({3, 4}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::sub(a, b); });
               }});
  c.push_back({"mul", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng), b = rand({3, 4}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::mul(a, b); });
               }});
  c.push_back({"scale", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::scale(x, -1.7); }); }});
  c.push_back(
      {"add_scalar", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::add_scalar(x, 0.3); }); }});
  c.push_back({"one_minus", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::one_minus(x); }); }});
  c.push_back({"negate", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::negate(x); }); }});
  c.push_back({"add_bias", [](Rng& rng) {
                 Tensor a = rand({2, 3, 4}, rng), b = rand({4}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::add_bias(a, b); });
               }});
  c.push_back({"add_n", [](Rng& rng) {
                 std::vector<Tensor> xs{rand({3, 2}, rng), rand({3, 2}, rng), rand({3, 2}, rng)};
                 return projected(rng, xs, [xs] { return ops::add_n(xs); });
               }});
  c.push_back({"relu", [](Rng& rng) { return unary(rng, {4, 5}, [](const Tensor& x) { return ops::relu(x); }); }});
  c.push_back({"sigmoid", [](Rng& rng) { return unary(rng, {4, 5}, [](const Tensor& x) { return ops::sigmoid(x); }); }});
  c.push_back({"tanh", [](Rng& rng) { return unary(rng, {4, 5}, [](const Tensor& x) { return ops::tanh(x); }); }});
  c.push_back(
      {"reshape", [](Rng& rng) { return unary(rng, {2, 6}, [](const Tensor& x) { return ops::reshape(x, {3, 4}); }); }});
  c.push_back({"concat_last", [](Rng& rng) {
                 Tensor a = rand({3, 2}, rng), b = rand({3, 4}, rng);
                 return projected(rng, {a, b}, [a, b] { return ops::concat_last(a, b); });
               }});
  c.push_back(
      {"slice_last", [](Rng& rng) { return unary(rng, {3, 5}, [](const Tensor& x) { return ops::slice_last(x, 1, 4); }); }});
  c.push_back(
      {"repeat_rows", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::repeat_rows(x, 3); }); }});
  c.push_back(
      {"mean_middle", [](Rng& rng) { return unary(rng, {2, 3, 4}, [](const Tensor& x) { return ops::mean_middle(x); }); }});
  c.push_back({"column", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::column(x, 2); }); }});
  c.push_back({"stack_columns", [](Rng& rng) {
                 std::vector<Tensor> xs{rand({3}, rng), rand({3}, rng)};
                 return projected(rng, xs, [xs] { return ops::stack_columns(xs); });
               }});
  c.push_back({"scale_rows", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng), w = rand({3}, rng);
                 return projected(rng, {a, w}, [a, w] { return ops::scale_rows(a, w); });
               }});
  c.push_back({"sum", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::sum(x); }); }});
  c.push_back({"mean", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::mean(x); }); }});
  c.push_back({"weighted_pick", [](Rng& rng) {
                 Tensor a = rand({3, 4}, rng);
                 const std::vector<std::size_t> idx{2, 0, 3};
                 const std::vector<Scalar> w{0.5, -1.25, 2.0};
                 return Setup{[a, idx, w] { return ops::weighted_pick(a, idx, w); }, {a}};
               }});
  c.push_back(
      {"softmax_rows", [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::softmax_rows(x); }); }});
  c.push_back({"log_softmax_rows",
               [](Rng& rng) { return unary(rng, {3, 4}, [](const Tensor& x) { return ops::log_softmax_rows(x); }); }});
  c.push_back({"softmax_xent", [](Rng& rng) {
                 Tensor x = rand({5}, rng);
                 return Setup{[x] { return ops::softmax_xent(x, 3).loss; }, {x}};
               }});
  c.push_back({"conv2d", [](Rng& rng) {
                 Tensor in = rand({5, 4, 2}, rng), k = rand({3, 3, 2, 3}, rng), b = rand({3}, rng);
                 return projected(rng, {in, k, b}, [in, k, b] { return ops::conv2d(in, k, b); });
               }});
  c.push_back({"crop_and_resize", [](Rng& rng) {
                 Tensor map = rand({6, 5, 2}, rng);
                 const std::vector<Box> boxes{random_box(rng, 6, 5), random_box(rng, 6, 5)};
                 return projected(rng, {map}, [map, boxes] { return ops::crop_and_resize(map, boxes, 3, 4); });
               }});
  c.push_back({"paste_back", [](Rng& rng) {
                 Tensor mem = rand({6, 5, 2}, rng), patches = rand({2, 3, 3, 2}, rng);
                 const std::vector<Box> boxes{random_box(rng, 6, 5), random_box(rng, 6, 5)};
                 const CoverageWeights cov = coverage_weights(boxes, 6, 5, 6, 5);
                 return projected(rng, {mem, patches},
                                  [mem, patches, boxes, cov] { return ops::paste_back(mem, boxes, patches, cov); });
               }});
  c.push_back({"gru_step", [](Rng& rng) {
                 GruCell cell = GruCell::create(3, 4, rng);
                 ParameterSet ps;
                 cell.register_params(ps, "gru");
                 randomize(ps, rng, 0.7);
                 Tensor s = rand({5, 4}, rng), x = rand({5, 3}, rng);
                 auto params = ps.tensors();
                 params.push_back(s);
                 params.push_back(x);
                 return projected(rng, params, [cell, s, x] { return gru_step(cell, s, x); });
               }});
  c.push_back({"fuse_input_features", [](Rng& rng) {
                 FusionNet net = FusionNet::create(3, 2, 4, rng);
                 ParameterSet ps;
                 net.register_params(ps, "fuse");
                 randomize(ps, rng, 0.7);
                 Tensor h = rand({2, 4, 3}, rng), f = rand({2, 2}, rng);
                 auto params = ps.tensors();
                 params.push_back(h);
                 params.push_back(f);
                 return projected(rng, params, [net, h, f] { return fuse_input_features(h, f, net); });
               }});
  c.push_back({"local_predict", [](Rng& rng) {
                 LocalReasoner net = LocalReasoner::create(2, 4, 3, 3, rng);
                 ParameterSet ps;
                 net.register_params(ps, "local");
                 randomize(ps, rng, 0.5);
                 Tensor mem = rand({6, 5, 2}, rng);
                 const std::vector<Box> boxes{random_box(rng, 6, 5), random_box(rng, 6, 5)};
                 auto params = ps.tensors();
                 params.push_back(mem);
                 return projected(rng, params, [net, mem, boxes] {
                   const auto p = local_predict(mem, boxes, net);
                   return ops::concat_last(p.logits, ops::reshape(p.attention, {p.attention.size(), 1}));
                 });
               }});
  c.push_back({"spatial_path", [](Rng& rng) {
                 Tensor m = rand({3, 4}, rng);
                 std::vector<Tensor> adj{rand_const({3, 3}, rng), rand_const({3, 3}, rng)};
                 std::vector<Tensor> w{rand({4, 4}, rng), rand({4, 4}, rng)};
                 std::vector<Tensor> params{m, w[0], w[1]};
                 return projected(rng, params, [m, adj, w] { return spatial_path(m, adj, w); });
               }});
  c.push_back({"semantic_path", [](Rng& rng) {
                 Tensor m = rand({3, 4}, rng), mc = rand({5, 4}, rng), wrc = rand({4, 4}, rng), wc = rand({4, 4}, rng);
                 std::vector<Tensor> w{rand({4, 4}, rng), rand({4, 4}, rng)};
                 const auto kg = random_graph(rng, 5, 2);
                 const AssignmentEdges assign = assignment_adjacency(random_probs(rng, 3, 5));
                 std::vector<Tensor> params{m, mc, wrc, wc, w[0], w[1]};
                 return projected(rng, params,
                                  [=] { return semantic_path(m, mc, assign, kg, wrc, wc, w); });
               }});
  c.push_back({"merge_paths", [](Rng& rng) {
                 Tensor gs = rand({3, 4}, rng), gc = rand({5, 4}, rng), w = rand({4, 4}, rng);
                 const AssignmentEdges assign = assignment_adjacency(random_probs(rng, 3, 5));
                 return projected(rng, {gs, gc, w}, [=] { return merge_paths(gs, gc, assign, w); });
               }});
  c.push_back({"reasoning_stack", [](Rng& rng) {
                 GraphReasoner reasoner = GraphReasoner::create(4, 5, 2, 3, rng);
                 ParameterSet ps;
                 reasoner.register_params(ps, "r");
                 randomize(ps, rng, 0.5);
                 Tensor m = rand({3, 4}, rng), mc = rand({5, 4}, rng);
                 std::vector<Tensor> adj;
                 for (int e = 0; e < 5; ++e) adj.push_back(rand_const({3, 3}, rng));
                 const auto kg = random_graph(rng, 5, 2);
                 const AssignmentEdges assign = assignment_adjacency(random_probs(rng, 3, 5));
                 auto params = ps.tensors();
                 params.push_back(m);
                 params.push_back(mc);
                 return projected(rng, params, [=] { return reasoning_stack(m, mc, adj, assign, kg, reasoner); });
               }});
  c.push_back({"attention_fuse", [](Rng& rng) {
                 std::vector<PredictionRecord> recs(3);
                 std::vector<Tensor> params;
                 for (auto& r : recs) {
                   r.logits = rand({4, 3}, rng);
                   r.attention = rand({4}, rng);
                   params.push_back(r.logits);
                   params.push_back(r.attention);
                 }
                 return projected(rng, params, [recs] { return attention_fuse(recs).logits; });
               }});
  c.push_back({"cross_feed", [](Rng& rng) {
                 Tensor l = rand({3, 4}, rng), g = rand({3, 2}, rng), w = rand({6, 2}, rng);
                 return projected(rng, {l, g, w}, [=] { return cross_feed(l, g, w); });
               }});
  c.push_back({"reweighted_loss", [](Rng& rng) {
                 Tensor logits = rand({3, 4}, rng);
                 const Tensor prev = random_probs(rng, 3, 4);
                 const std::vector<std::size_t> labels{1, 3, 0};
                 return Setup{[=] { return reweighted_loss(prev, logits, labels, 0.5); }, {logits}};
               }});
  c.push_back({"total_loss", [](Rng& rng) {
                 ModelConfig cfg;
                 cfg.classes = 4;
                 cfg.feature_dim = 3;
                 cfg.memory_dim = 4;
                 cfg.fc_width = 5;
                 cfg.pool = 3;
                 cfg.iterations = 1;
                 cfg.bandwidth_fraction = 0.5;
                 cfg.seed = rng();
                 const Scene scene = tiny_scene(rng, cfg.feature_dim, cfg.classes);
                 const auto kg = random_graph(rng, cfg.classes, 2);
                 Model model = Model::create(cfg, kg.size());
                 randomize(model.params, rng, 0.5);
                 const SceneContext ctx = prepare_scene(scene, cfg, kg);
                 auto cache = std::make_shared<ConstantCache>();
                 return Setup{[=] {
                                const RolloutState st = rollout(model, scene, ctx, cfg.iterations, cache.get());
                                Tensor loss = total_loss(st, scene.labels, LossConfig{}, cache.get()).total;
                                cache->replay = true;
                                return loss;
                              },
                              model.params.tensors()};
               }});
  return c;
}

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 3);
  return std::string(buf, end);
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  return names;
}

std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options) {
  struct CorruptionGuard {
    ~CorruptionGuard() { ops::clear_adjoint_corruption(); }
  } guard;
  if (!options.corrupt_op.empty()) ops::corrupt_adjoint(options.corrupt_op, options.corrupt_factor);
  std::vector<SuiteEntry> entries;
  for (const auto& c : cases()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), c.name) == options.only.end()) {
      continue;
    }
    SuiteEntry e;
    e.name = c.name;
    for (std::size_t seed = 0; seed < options.seeds; ++seed) {
      Rng rng(0x9e3779b97f4a7c15ULL * (seed + 1) ^ std::hash<std::string>{}(c.name));
      Setup setup = c.build(rng);
      GradCheckOptions check = options.check;
      check.sample_seed = seed;
      const GradCheckReport rep = finite_diff_check(setup.objective, setup.params, check);
      ++e.seeds;
      if (rep.passed) ++e.seeds_passed;
      e.checked += rep.checked;
      e.nonsmooth += rep.nonsmooth;
      if (rep.max_relative_error >= e.max_error) {
        e.max_error = rep.max_relative_error;
        e.worst = "seed " + std::to_string(seed) + " " + rep.worst;
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string format_suite_entry(const SuiteEntry& e) {
  return std::string(e.passed() ? "PASS" : "FAIL") + "  " + e.name + "  seeds=" + std::to_string(e.seeds_passed) + "/" +
         std::to_string(e.seeds) + "  max_rel_err=" + number(e.max_error) + "  checked=" + std::to_string(e.checked) +
         "  nonsmooth=" + std::to_string(e.nonsmooth) + (e.passed() ? "" : "  worst: " + e.worst);
}

}  // namespace graphreason
