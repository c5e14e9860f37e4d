#include "txnlink/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "txnlink/errors.hpp"

namespace txnlink::evaluation {

namespace {

void check(std::span<const double> scores, std::span<const int> labels, bool need_both) {
  if (scores.size() != labels.size())
    throw MetricError("got " + std::to_string(scores.size()) + " scores and " + std::to_string(labels.size()) + " labels");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw MetricError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw MetricError("scores must be finite");
    pos += labels[i] == 1;
  }
  if (pos == 0 || (need_both && pos == labels.size())) throw MetricError("both classes must be present");
}

/// Indices ordered by descending score, stable on ties.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels, true);
  const auto idx = descending(scores);
  // Walk tie groups from the top; each positive beats every negative below
  // its group and half of the negatives inside it.
  double wins = 0.0;
  double pos_total = 0.0, neg_total = 0.0;
  for (int l : labels) (l ? pos_total : neg_total) += 1.0;
  double neg_above = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double p = 0.0, n = 0.0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? p : n) += 1.0;
      ++j;
    }
    wins += p * (neg_total - neg_above - n) + 0.5 * p * n;
    neg_above += n;
    i = j;
  }
  return wins / (pos_total * neg_total);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels, false);
  const auto idx = descending(scores);
  double positives = 0.0;
  for (int l : labels) positives += l;
  double tp = 0.0, ap = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (!labels[idx[k]]) continue;
    tp += 1.0;
    ap += tp / static_cast<double>(k + 1);
  }
  return ap / positives;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels, true);
  const auto idx = descending(scores);
  double pos_total = 0.0, neg_total = 0.0;
  for (int l : labels) (l ? pos_total : neg_total) += 1.0;
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    const double thr = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == thr) {
      (labels[idx[i]] ? tp : fp) += 1.0;
      ++i;
    }
    curve.push_back({fp / neg_total, tp / pos_total, thr});
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels) {
  MetricsReport r;
  r.roc_auc = roc_auc(scores, labels);
  r.average_precision = average_precision(scores, labels);
  r.examples = labels.size();
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return r;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"roc_auc", r.roc_auc},
                     {"average_precision", r.average_precision},
                     {"examples", r.examples},
                     {"positives", r.positives}};
}

void write_roc_csv(const std::string& path, std::span<const RocPoint> curve) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  out.precision(17);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : curve) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

void read_scored_csv(const std::string& path, std::vector<double>& scores, std::vector<int>& labels) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestionError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cs = col("score"), cl = col("label");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    try {
      scores.push_back(std::stod(cells.at(cs)));
      labels.push_back(std::stoi(cells.at(cl)));
    } catch (const std::exception&) {
      throw IngestionError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
}

}  // namespace txnlink::evaluation
