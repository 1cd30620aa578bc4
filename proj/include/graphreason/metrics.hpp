#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphreason/tensor.hpp"

namespace graphreason {

// All-points interpolated average precision: the area under the precision
// envelope. Equal scores keep their input order. nullopt without positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const bool> positives);

struct ClassMetrics {
  std::size_t instances = 0;
  std::optional<double> ap;
  std::optional<double> accuracy;  // recall of the class; absent without instances
};

struct MetricReport {
  double per_instance_ap = 0;
  double per_instance_ac = 0;
  double per_class_ap = 0;
  double per_class_ac = 0;
  std::size_t regions = 0;
  std::optional<double> recall;  // set when a drop protocol was applied
  std::vector<ClassMetrics> classes;
};

// Row-major [N x C] scores. Argmax ties go to the lowest class index;
// classes without instances are left out of the per-class means.
MetricReport aggregate(std::span<const double> scores, std::size_t classes, std::span<const std::size_t> labels);
MetricReport aggregate(const Tensor& scores, std::span<const std::size_t> labels);

// "name = value" lines followed by the per-class table.
std::string format_report(const MetricReport& report, const std::vector<std::string>& class_names = {});
// One "name<TAB>value" line per aggregate metric.
std::string format_metric_lines(const MetricReport& report);

}  // namespace graphreason
