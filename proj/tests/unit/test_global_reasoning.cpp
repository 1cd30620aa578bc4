#include "graphreason/errors.hpp"
#include "graphreason/global_reasoning.hpp"
#include "graphreason/model.hpp"
#include "helpers.hpp"

using namespace graphreason;
using namespace graphreason::testing;

namespace {

Tensor eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1;
  return t;
}

Tensor probs(Rng& rng, std::size_t r, std::size_t c) { return ops::softmax_rows(random_tensor({r, c}, rng)); }

void zero(Tensor t) { std::fill(t.data().begin(), t.data().end(), 0); }

}  // namespace

TEST_CASE("assignment edges") {
  Tensor uniform({3, 4}, 0.25);
  const auto a = assignment_adjacency(uniform);
  for (Scalar v : a.region_to_class.data()) CHECK(v == 0.25);
  CHECK(a.class_from_region.shape() == Shape{4, 3});
  for (Scalar v : a.class_from_region.data()) CHECK(v == doctest::Approx(1.0 / 3));

  Rng rng(1);
  const auto b = assignment_adjacency(probs(rng, 5, 3));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += b.region_to_class[r * 3 + c];
    CHECK(s == doctest::Approx(1).epsilon(1e-15));
  }

  const auto single = assignment_adjacency(Tensor::matrix({{0.7, 0.3, 0.0}}));
  CHECK(single.class_from_region[0] == 1.0);
  CHECK(single.class_from_region[1] == 1.0);
  CHECK(single.class_from_region[2] == 0.0);

  CHECK_THROWS_AS(assignment_adjacency(Tensor::matrix({{0.7, 0.7}})), ContractError);
}

TEST_CASE("spatial path") {
  Rng rng(2);
  Tensor m = random_tensor({3, 4}, rng);
  const std::vector<Tensor> id_adj{eye(3)}, id_w{eye(4)};
  check_close(spatial_path(m, id_adj, id_w), m, 0);

  const std::vector<Tensor> zero_adj{Tensor({3, 3}), Tensor({3, 3})};
  const std::vector<Tensor> ws{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)};
  for (Scalar v : values(spatial_path(m, zero_adj, ws))) CHECK(v == 0);

  const double w = 0.4;
  Tensor m2 = random_tensor({2, 4}, rng);
  Tensor right({2, 2}), left({2, 2});
  right[0 * 2 + 1] = w;
  left[1 * 2 + 0] = w;
  const std::vector<Tensor> adj{right, left}, two_id{eye(4), eye(4)};
  const Tensor out = spatial_path(m2, adj, two_id);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(out[d] == doctest::Approx(w * m2[4 + d]).epsilon(1e-15));
    CHECK(out[4 + d] == doctest::Approx(w * m2[d]).epsilon(1e-15));
  }
}

TEST_CASE("semantic path") {
  Rng rng(3);
  Tensor m_r = random_tensor({3, 4}, rng), m_c = random_tensor({5, 4}, rng);
  const auto assign = assignment_adjacency(probs(rng, 3, 5));
  const std::vector<Tensor> empty_kg{Tensor({5, 5}), Tensor({5, 5})};
  const std::vector<Tensor> ws{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)};
  const Tensor none = semantic_path(m_r, m_c, assign, empty_kg, random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), ws);
  CHECK(none.shape() == Shape{5, 4});
  for (Scalar v : none.data()) CHECK(v == 0);

  Tensor one_r = random_tensor({1, 4}, rng), one_c = random_tensor({1, 4}, rng);
  const auto unit = assignment_adjacency(Tensor::matrix({{1.0}}));
  const std::vector<Tensor> kg{Tensor::matrix({{1.0}})}, w1{eye(4)};
  const Tensor hand = semantic_path(one_r, one_c, unit, kg, eye(4), eye(4), w1);
  for (std::size_t d = 0; d < 4; ++d) CHECK(hand[d] == doctest::Approx(std::max(0.0, one_r[d] + one_c[d])).epsilon(1e-15));

  const std::vector<Tensor> kg5{random_tensor({5, 5}, rng)}, w5{eye(4)};
  for (std::size_t r : {1, 2, 7}) {
    const auto a = assignment_adjacency(probs(rng, r, 5));
    CHECK(semantic_path(random_tensor({r, 4}, rng), m_c, a, kg5, eye(4), eye(4), w5).shape() == Shape{5, 4});
  }
}

TEST_CASE("merge paths") {
  Rng rng(4);
  const auto assign = assignment_adjacency(probs(rng, 3, 5));
  for (Scalar v : values(merge_paths(Tensor({3, 4}), Tensor({5, 4}), assign, random_tensor({4, 4}, rng)))) CHECK(v == 0);

  Tensor gs = random_tensor({3, 4}, rng);
  check_close(merge_paths(gs, Tensor({5, 4}), assign, random_tensor({4, 4}, rng)), ops::relu(gs), 0);

  Tensor g1 = random_tensor({1, 4}, rng), c1 = random_tensor({1, 4}, rng);
  const Tensor hand = merge_paths(g1, c1, assignment_adjacency(Tensor::matrix({{1.0}})), eye(4));
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(hand[d] == doctest::Approx(std::max(0.0, g1[d] + std::max(0.0, c1[d]))).epsilon(1e-15));
  }
}

TEST_CASE("reasoning stack") {
  Rng rng(5);
  GraphReasoner reasoner = GraphReasoner::create(4, 5, 2, 3, rng);
  Tensor m_r = random_tensor({3, 4}, rng), m_c = random_tensor({6, 4}, rng);
  std::vector<Tensor> adj;
  for (int e = 0; e < 5; ++e) adj.push_back(random_tensor({3, 3}, rng));
  const std::vector<Tensor> kg{random_tensor({6, 6}, rng), random_tensor({6, 6}, rng)};
  const auto assign = assignment_adjacency(probs(rng, 3, 6));

  const Tensor out = reasoning_stack(m_r, m_c, adj, assign, kg, reasoner);
  CHECK(out.shape() == Shape{3, 4});

  GraphReasoner one;
  one.stacks = {reasoner.stacks[0]};
  const auto& s = one.stacks[0];
  const Tensor g_sp = spatial_path(m_r, adj, s.spatial);
  const Tensor g_sem = semantic_path(m_r, m_c, assign, kg, s.region_to_class, s.class_self, s.semantic);
  const Tensor expected = ops::add(m_r, merge_paths(g_sp, g_sem, assign, s.class_to_region));
  check_close(reasoning_stack(m_r, m_c, adj, assign, kg, one), expected, 1e-14);

  PathToggles spatial_only;
  spatial_only.semantic = false;
  check_close(reasoning_stack(m_r, m_c, adj, assign, kg, one, spatial_only), ops::add(m_r, ops::relu(g_sp)), 1e-14);

  for (auto& st : reasoner.stacks) {
    for (auto& w : st.spatial) zero(w);
    for (auto& w : st.semantic) zero(w);
    for (auto* w : {&st.region_to_class, &st.class_self, &st.class_to_region}) zero(*w);
  }
  check_close(reasoning_stack(m_r, m_c, adj, assign, kg, reasoner), m_r, 0);
}

TEST_CASE("global memory update") {
  Rng rng(6);
  GruCell cell = GruCell::create(4, 4, rng, ops::Activation::kSigmoid);
  Tensor mem = random_tensor({3, 4}, rng), x = random_tensor({3, 4}, rng);
  std::fill(cell.update_b.data().begin(), cell.update_b.data().end(), 1e3);
  check_close(global_memory_update(mem, x, cell), mem, 0);
  std::fill(cell.update_b.data().begin(), cell.update_b.data().end(), -1e3);
  std::fill(cell.reset_b.data().begin(), cell.reset_b.data().end(), -1e3);
  check_close(global_memory_update(Tensor({3, 4}), x, cell),
              ops::sigmoid(ops::add_bias(ops::matmul(x, cell.input_w), cell.bias)), 1e-15);
}

TEST_CASE("global prediction") {
  const RegionHead head = RegionHead::create(4, 5);
  for (Scalar p : values(ops::softmax_rows(global_predict(Tensor({3, 4}), head).logits))) CHECK(p == doctest::Approx(0.2));

  Rng rng(7);
  RegionHead random = head;
  random.logit_w = random_tensor({4, 5}, rng);
  random.logit_b = random_tensor({5}, rng);
  Tensor mem = random_tensor({3, 4}, rng);
  Tensor perm({3, 4});
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t d = 0; d < 4; ++d) perm[r * 4 + d] = mem[order[r] * 4 + d];
  const Tensor a = global_predict(mem, random).logits, b = global_predict(perm, random).logits;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(b[r * 5 + c] == a[order[r] * 5 + c]);
  check_close(global_predict(mem, random).logits, a, 0);
}

TEST_CASE("cross feed") {
  Rng rng(8);
  Tensor local = random_tensor({3, 4}, rng);
  Tensor proj({8, 4});
  for (std::size_t i = 0; i < 4; ++i) proj[i * 4 + i] = 1;
  check_close(cross_feed(local, Tensor({3, 4}), proj), local, 0);

  Tensor g = random_tensor({3, 4}, rng), w = random_tensor({8, 4}, rng);
  const Tensor ab = cross_feed(local, g, w), ba = cross_feed(g, local, w);
  CHECK(ab.dim(0) == 3);
  bool differs = false;
  for (std::size_t i = 0; i < ab.size(); ++i) differs = differs || std::abs(ab[i] - ba[i]) > 1e-9;
  CHECK(differs);
}
