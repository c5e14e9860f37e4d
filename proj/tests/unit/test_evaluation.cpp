#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "txnlink/errors.hpp"
#include "txnlink/evaluation.hpp"

using namespace txnlink;
using namespace txnlink::evaluation;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return good / pairs;
}

double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  // Rank k holds the example with the k-th highest score, earlier index first on ties.
  std::vector<std::size_t> order;
  std::vector<bool> used(s.size(), false);
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!used[i] && (best == s.size() || s[i] > s[best])) best = i;
    used[best] = true;
    order.push_back(best);
  }
  double pos = 0;
  for (int v : y) pos += v;
  double tp = 0, ap = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (y[order[k]] == 1) {
      tp += 1;
      ap += (1.0 / pos) * (tp / static_cast<double>(k + 1));
    }
  }
  return ap;
}

}  // namespace

TEST_CASE("roc auc") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const std::vector<int> y{1, 0, 1, 0};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), MetricError);
}

TEST_CASE("random labels give chance-level metrics") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.3;
  }
  CHECK(std::abs(roc_auc(s, y) - 0.5) < 0.02);
  double prevalence = 0;
  for (int v : y) prevalence += v;
  prevalence /= static_cast<double>(y.size());
  CHECK(std::abs(average_precision(s, y) - prevalence) < 0.02);
}

TEST_CASE("metrics match brute force on small random sets") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 8) / 8.0;  // plenty of ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(roc_auc(s, y) - brute_auc(s, y)) < 1e-12);
    CHECK(std::abs(average_precision(s, y) - brute_ap(s, y)) < 1e-12);
    const auto curve = roc_curve(s, y);
    CHECK(std::abs(trapezoid_area(curve) - roc_auc(s, y)) < 1e-12);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].fpr >= curve[i - 1].fpr);
      CHECK(curve[i].tpr >= curve[i - 1].tpr);
      CHECK(curve[i].threshold < curve[i - 1].threshold);
    }
    // Flipped labels with negated scores.
    std::vector<double> neg(n);
    std::vector<int> flip(n);
    for (std::size_t i = 0; i < n; ++i) {
      neg[i] = -s[i];
      flip[i] = 1 - y[i];
    }
    CHECK(std::abs(roc_auc(neg, flip) - roc_auc(s, y)) < 1e-12);
    // Strictly monotone transform.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(roc_auc(t, y) == roc_auc(s, y));
  }
}

TEST_CASE("average precision") {
  CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  for (std::size_t k = 1; k <= 6; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < 6; ++i) {
      s.push_back(1.0 - 0.1 * static_cast<double>(i));
      y.push_back(i + 1 == k);
    }
    CHECK(average_precision(s, y) == doctest::Approx(1.0 / static_cast<double>(k)).epsilon(1e-15));
  }
  // Ties follow input order.
  CHECK(average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 1.0);
  CHECK(average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
}

TEST_CASE("roc curve") {
  const auto c = roc_curve(std::vector<double>{0.8, 0.2}, std::vector<int>{1, 0});
  REQUIRE(c.size() == 3);
  CHECK((c[0].fpr == 0.0 && c[0].tpr == 0.0));
  CHECK((c[1].fpr == 0.0 && c[1].tpr == 1.0));
  CHECK((c[2].fpr == 1.0 && c[2].tpr == 1.0));
  CHECK(std::isinf(c[0].threshold));
}

TEST_CASE("report and files") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const std::vector<int> y{1, 0, 1, 0};
  const auto r = evaluate(s, y);
  CHECK(r.examples == 4);
  CHECK(r.positives == 2);
  nlohmann::json j = r;
  CHECK(j.at("roc_auc").get<double>() == doctest::Approx(0.75));

  const auto dir = std::filesystem::temp_directory_path() / "txnlink_eval";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "scores.csv");
    f << "id,label,score\na,1,0.9\nb,0,0.8\nc,1,0.7\nd,0,0.1\n";
  }
  std::vector<double> rs;
  std::vector<int> ry;
  read_scored_csv((dir / "scores.csv").string(), rs, ry);
  CHECK(rs == s);
  CHECK(ry == y);
  {
    std::ofstream f(dir / "bad.csv");
    f << "id,value\na,1\n";
  }
  CHECK_THROWS_AS(read_scored_csv((dir / "bad.csv").string(), rs, ry), IngestionError);

  write_roc_csv((dir / "roc.csv").string(), roc_curve(s, y));
  std::ifstream in(dir / "roc.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "fpr,tpr,threshold");
  std::filesystem::remove_all(dir);
}
