#include <random>

#include "graphreason/errors.hpp"
#include "graphreason/metrics.hpp"
#include "helpers.hpp"
#include "metrics_oracle.hpp"

using namespace graphreason;
using namespace graphreason::testing;

namespace {

std::optional<double> ap(std::vector<double> scores, std::vector<bool> positives) {
  std::unique_ptr<bool[]> flags(new bool[positives.size()]);
  for (std::size_t i = 0; i < positives.size(); ++i) flags[i] = positives[i];
  return average_precision(scores, std::span<const bool>(flags.get(), positives.size()));
}

}  // namespace

TEST_CASE("average precision") {
  CHECK(*ap({0.9, 0.8, 0.1}, {true, true, false}) == 1.0);
  CHECK(*ap({0.9, 0.1}, {false, true}) == 0.5);
  CHECK(*ap({0.9, 0.8, 0.7}, {true, false, true}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK_FALSE(ap({0.3, 0.2}, {false, false}).has_value());
  CHECK(*ap({0.5, 0.5}, {false, true}) == 0.5);
  CHECK(*ap({0.5, 0.5}, {true, false}) == 1.0);
}

TEST_CASE("aggregate hand cases") {
  const std::vector<double> perfect{0.9, 0.1, 0.8, 0.2};
  const std::vector<std::size_t> zeros{0, 0};
  const MetricReport one = aggregate(perfect, 2, zeros);
  CHECK(one.per_instance_ap == 1.0);
  CHECK(one.per_instance_ac == 1.0);
  CHECK(one.per_class_ap == 1.0);
  CHECK(one.per_class_ac == 1.0);
  CHECK_FALSE(one.classes[1].accuracy.has_value());

  std::vector<double> scores;
  std::vector<std::size_t> labels;
  for (int i = 0; i < 9; ++i) {
    scores.insert(scores.end(), {0.8, 0.2});
    labels.push_back(0);
  }
  scores.insert(scores.end(), {0.6, 0.4});
  labels.push_back(1);
  const MetricReport two = aggregate(scores, 2, labels);
  CHECK(two.per_instance_ac == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.per_class_ac == 0.5);

  const std::vector<double> tie{0.5, 0.5};
  CHECK(aggregate(tie, 2, std::vector<std::size_t>{0}).per_instance_ac == 1.0);
  CHECK(aggregate(tie, 2, std::vector<std::size_t>{1}).per_instance_ac == 0.0);
  CHECK_THROWS_AS(aggregate(std::vector<double>{}, 2, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("aggregate matches the brute-force oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + rng() % 5, n = 1 + rng() % 30;
    std::vector<double> scores(n * classes);
    std::vector<std::size_t> labels(n);
    const bool coarse = trial % 2 == 0;
    for (auto& s : scores) s = coarse ? double(rng() % 4) / 4 : std::uniform_real_distribution<double>(0, 1)(rng);
    for (auto& l : labels) l = rng() % classes;
    const MetricReport rep = aggregate(scores, classes, labels);
    const OracleReport oracle = brute_force_report(scores, classes, labels);
    CHECK(rep.per_instance_ap == oracle.per_instance_ap);
    CHECK(rep.per_instance_ac == oracle.per_instance_ac);
    CHECK(rep.per_class_ap == oracle.per_class_ap);
    CHECK(rep.per_class_ac == oracle.per_class_ac);
    for (std::size_t c = 0; c < classes; ++c) {
      CHECK(rep.classes[c].accuracy == oracle.class_ac[c]);
      if (oracle.class_ac[c]) CHECK(rep.classes[c].ap == oracle.class_ap[c]);
    }
  }
}

TEST_CASE("report formats") {
  const std::vector<double> scores{0.9, 0.1, 0.3, 0.7};
  MetricReport rep = aggregate(scores, 2, std::vector<std::size_t>{0, 1});
  rep.recall = 0.5;
  const std::string lines = format_metric_lines(rep);
  for (const char* key : {"per_instance_ap\t", "per_instance_ac\t", "per_class_ap\t", "per_class_ac\t", "recall\t"}) {
    CHECK(lines.find(key) != std::string::npos);
  }
  const std::string text = format_report(rep, {"cat", "dog"});
  CHECK(text.find("per_class_ac = 1") != std::string::npos);
  CHECK(text.find("dog") != std::string::npos);
}
