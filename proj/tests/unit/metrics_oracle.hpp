#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace graphreason::testing {

// Quadratic-time envelope AP: each positive contributes the best precision
// at its rank or any later rank, averaged over positives.
inline std::optional<double> brute_force_ap(const std::vector<double>& scores, const std::vector<bool>& positives) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t n = order.size();
  std::vector<double> precision(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    hits += positives[order[k]];
    precision[k] = double(hits) / double(k + 1);
  }
  if (hits == 0) return std::nullopt;
  double total = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!positives[order[k]]) continue;
    double best = 0;
    for (std::size_t j = k; j < n; ++j) best = std::max(best, precision[j]);
    total += best;
  }
  return total / double(hits);
}

struct OracleReport {
  double per_instance_ap = 0, per_instance_ac = 0, per_class_ap = 0, per_class_ac = 0;
  std::vector<std::optional<double>> class_ap, class_ac;
};

inline OracleReport brute_force_report(const std::vector<double>& scores, std::size_t classes,
                                       const std::vector<std::size_t>& labels) {
  const std::size_t n = labels.size();
  OracleReport rep;
  std::vector<bool> pooled(n * classes);
  for (std::size_t i = 0; i < n; ++i) pooled[i * classes + labels[i]] = true;
  rep.per_instance_ap = *brute_force_ap(scores, pooled);
  std::size_t correct = 0;
  std::vector<std::size_t> count(classes), hit(classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (scores[i * classes + c] > scores[i * classes + best]) best = c;
    correct += best == labels[i];
    ++count[labels[i]];
    hit[labels[i]] += best == labels[i];
  }
  rep.per_instance_ac = double(correct) / double(n);
  std::size_t present = 0;
  double ap_sum = 0, ac_sum = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> col(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * classes + c];
      pos[i] = labels[i] == c;
    }
    rep.class_ap.push_back(brute_force_ap(col, pos));
    rep.class_ac.push_back(count[c] ? std::optional<double>(double(hit[c]) / double(count[c])) : std::nullopt);
    if (!count[c]) continue;
    ++present;
    ap_sum += *rep.class_ap.back();
    ac_sum += *rep.class_ac.back();
  }
  rep.per_class_ap = ap_sum / double(present);
  rep.per_class_ac = ac_sum / double(present);
  return rep;
}

}  // namespace graphreason::testing
