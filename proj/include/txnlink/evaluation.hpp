#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace txnlink::evaluation {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
};

/// Mann–Whitney AUC with ties counted one half. Labels are 0/1.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Step-sum AP in descending score order; ties keep input order.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// One point per distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> curve);

struct MetricsReport {
  double roc_auc = 0.0;
  double average_precision = 0.0;
  std::size_t examples = 0;
  std::size_t positives = 0;
};

MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels);
void to_json(nlohmann::json& j, const MetricsReport& r);

/// Columns fpr,tpr,threshold with a header row.
void write_roc_csv(const std::string& path, std::span<const RocPoint> curve);

/// Reads a delimited file with a header containing `score` and `label` columns.
void read_scored_csv(const std::string& path, std::vector<double>& scores, std::vector<int>& labels);

}  // namespace txnlink::evaluation
