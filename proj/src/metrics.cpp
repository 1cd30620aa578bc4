#include "graphreason/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <memory>
#include <numeric>
#include <sstream>

#include "graphreason/errors.hpp"

namespace graphreason {

namespace {

std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores, std::span<const bool> positives) {
  if (scores.size() != positives.size()) {
    throw DimensionError("average_precision: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(positives.size()) + " flags");
  }
  const auto total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  if (total_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> precision(order.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positives[order[k]]) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = order.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (positives[order[k]]) ap += precision[k];
  }
  return ap / static_cast<double>(total_pos);
}

MetricReport aggregate(std::span<const double> scores, std::size_t classes, std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  if (n == 0 || classes == 0) throw ContractError("aggregate: empty prediction set");
  if (scores.size() != n * classes) {
    throw DimensionError("aggregate: " + std::to_string(scores.size()) + " scores for " + std::to_string(n) + "x" +
                         std::to_string(classes));
  }
  MetricReport rep;
  rep.regions = n;
  rep.classes.resize(classes);
  std::vector<std::size_t> correct(classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw IndexError("label " + std::to_string(labels[i]) + " out of range");
    const double* row = scores.data() + i * classes;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    rep.classes[labels[i]].instances++;
    if (best == labels[i]) {
      ++hits;
      ++correct[labels[i]];
    }
  }
  rep.per_instance_ac = static_cast<double>(hits) / static_cast<double>(n);

  // std::vector<bool> has no contiguous storage for std::span.
  std::unique_ptr<bool[]> flags(new bool[n * classes]());
  for (std::size_t i = 0; i < n; ++i) flags[i * classes + labels[i]] = true;
  rep.per_instance_ap = average_precision(scores, std::span<const bool>(flags.get(), n * classes)).value_or(0.0);

  double ap_sum = 0, ac_sum = 0;
  std::size_t present = 0;
  std::vector<double> column(n);
  std::unique_ptr<bool[]> positive(new bool[n]);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& cm = rep.classes[c];
    if (cm.instances == 0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[i * classes + c];
      positive[i] = labels[i] == c;
    }
    cm.ap = average_precision(column, std::span<const bool>(positive.get(), n));
    cm.accuracy = static_cast<double>(correct[c]) / static_cast<double>(cm.instances);
    ap_sum += *cm.ap;
    ac_sum += *cm.accuracy;
    ++present;
  }
  rep.per_class_ap = ap_sum / static_cast<double>(present);
  rep.per_class_ac = ac_sum / static_cast<double>(present);
  return rep;
}

MetricReport aggregate(const Tensor& scores, std::span<const std::size_t> labels) {
  if (scores.rank() != 2) throw DimensionError("aggregate: scores must be [N x C], got " + shape_string(scores.shape()));
  std::vector<double> values(scores.data().begin(), scores.data().end());
  return aggregate(values, scores.dim(1), labels);
}

std::string format_report(const MetricReport& report, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "regions = " << report.regions << '\n';
  out << "per_instance_ap = " << number(report.per_instance_ap) << '\n';
  out << "per_instance_ac = " << number(report.per_instance_ac) << '\n';
  out << "per_class_ap = " << number(report.per_class_ap) << '\n';
  out << "per_class_ac = " << number(report.per_class_ac) << '\n';
  if (report.recall) out << "recall = " << number(*report.recall) << '\n';
  out << "# class\tinstances\tap\taccuracy\n";
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& cm = report.classes[c];
    out << (c < class_names.size() ? class_names[c] : std::to_string(c)) << '\t' << cm.instances << '\t'
        << (cm.ap ? number(*cm.ap) : "-") << '\t' << (cm.accuracy ? number(*cm.accuracy) : "-") << '\n';
  }
  return out.str();
}

std::string format_metric_lines(const MetricReport& report) {
  std::ostringstream out;
  out << "per_instance_ap\t" << number(report.per_instance_ap) << '\n';
  out << "per_instance_ac\t" << number(report.per_instance_ac) << '\n';
  out << "per_class_ap\t" << number(report.per_class_ap) << '\n';
  out << "per_class_ac\t" << number(report.per_class_ac) << '\n';
  if (report.recall) out << "recall\t" << number(*report.recall) << '\n';
  return out.str();
}

}  // namespace graphreason
