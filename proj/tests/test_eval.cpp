#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ltr/eval.hpp"
#include "ltr/rng.hpp"

using namespace ltr;

namespace {

Dataset one_feature_dataset(
    const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  Dataset ds;
  ds.feature_dim = 1;
  for (const auto& [qid, values] : groups) {
    QueryGroup g;
    g.qid = qid;
    for (double v : values) g.items.push_back(Item{{v}, 0});
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

}  // namespace

TEST_CASE("dcg formula") {
  CHECK(dcg({1}, {1}) == doctest::Approx(1.0));
  // labels [3,2] in ideal order: 7/1 + 3/log2(3)
  CHECK(dcg({1, 2}, {3, 2}) ==
        doctest::Approx(7.0 + 3.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(dcg({1, 2, 3}, {0, 0, 0}) == 0.0);
  // truncation keeps only ranks <= k
  CHECK(dcg({1, 2}, {3, 2}, 1) == doctest::Approx(7.0));
  CHECK_THROWS_AS(dcg({1, 1}, {0, 0}), Error);   // not a permutation
  CHECK_THROWS_AS(dcg({1, 3}, {0, 0}), Error);   // out of range
  CHECK_THROWS_AS(dcg({1, 2}, {0}), Error);      // length mismatch
}

TEST_CASE("ndcg on the worked 3-item example") {
  std::vector<int> labels{2, 1, 0};
  std::vector<double> scores{0.1, 0.9, 0.5};
  // Predicted order: item2, item3, item1 -> pi = (3, 1, 2).
  std::vector<int> pi = ranking_from_scores(scores);
  CHECK(pi == std::vector<int>{3, 1, 2});
  double want_dcg = 3.0 / std::log2(4.0) + 1.0 / std::log2(2.0);
  double want_ideal = 3.0 / std::log2(2.0) + 1.0 / std::log2(3.0);
  auto v = ndcg_at_k(scores, labels, 5);
  REQUIRE(v.has_value());
  CHECK(*v == doctest::Approx(want_dcg / want_ideal).epsilon(1e-12));
}

TEST_CASE("ndcg is 1 when scores already rank ideally, undefined on all-zero labels") {
  CHECK(*ndcg_at_k({3.0, 2.0, 1.0}, {2, 1, 0}) == doctest::Approx(1.0));
  CHECK(!ndcg_at_k({1.0, 2.0}, {0, 0}).has_value());
}

TEST_CASE("stable tie-break keeps original order") {
  // Tied scores: item 1 (label 0) stays ahead of item 2 (label 2).
  auto v = ndcg_at_k({1.0, 1.0}, {0, 2}, 5);
  REQUIRE(v.has_value());
  double want = (3.0 / std::log2(3.0)) / 3.0;
  CHECK(*v == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ideal ranking attains the brute-force max over permutations") {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + static_cast<int>(rng.below(6));
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(rng.below(5));
    double ideal = dcg(ideal_ranking(labels), labels, 5);
    double brute = 0.0;
    {
      // max over all n! rank assignments
      std::vector<int> pi(n);
      for (int i = 0; i < n; ++i) pi[i] = i + 1;
      std::sort(pi.begin(), pi.end());
      do {
        brute = std::max(brute, dcg(pi, labels, 5));
      } while (std::next_permutation(pi.begin(), pi.end()));
    }
    CHECK(ideal == brute);  // exact f64 equality
  }
}

TEST_CASE("ndcg is invariant under strictly increasing score transforms") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 2 + static_cast<int>(rng.below(5));
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(4));
      any |= labels[i] > 0;
      scores[i] = rng.normal();
    }
    if (!any) labels[0] = 2;
    auto base = ndcg_at_k(scores, labels, 5);
    std::vector<double> warped = scores;
    for (double& s : warped) s = std::exp(2.0 * s) + 3.0;
    auto same = ndcg_at_k(warped, labels, 5);
    REQUIRE(base.has_value());
    CHECK(*base == *same);
  }
}

TEST_CASE("outlier detection") {
  SUBCASE("uniform validation, in-range test: no outliers") {
    std::vector<double> vals;
    for (int i = 0; i < 1000; ++i) vals.push_back(i / 999.0);
    Dataset val = one_feature_dataset({{"v", vals}});
    Dataset test = one_feature_dataset({{"t1", {0.2, 0.9}}, {"t2", {0.5}}});
    OutlierThresholds th = fit_outlier_thresholds(val, 5);
    CHECK(!th.low[0].has_value());
    CHECK(!th.high[0].has_value());
    CHECK(detect_outlier_qgs(th, test).empty());
  }
  SUBCASE("an isolated 0.3%-mass cluster beyond a gap is fenced off") {
    // 997 points dense in [0, 1], 3 points at ~10x the range.
    std::vector<double> vals;
    for (int i = 0; i < 997; ++i) vals.push_back(i / 996.0);
    vals.insert(vals.end(), {10.0, 10.01, 10.02});
    Dataset val = one_feature_dataset({{"v", vals}});
    OutlierThresholds th = fit_outlier_thresholds(val, 5);
    REQUIRE(th.high[0].has_value());
    CHECK(*th.high[0] > 1.0);
    CHECK(*th.high[0] < 10.0);
    Dataset test = one_feature_dataset(
        {{"hot", {0.5, 9.9}}, {"cold", {0.4, 0.6}}, {"edge", {1.0}}});
    std::set<std::string> out = detect_outlier_qgs(th, test);
    CHECK(out == std::set<std::string>{"hot"});
    // Adding strictly in-range QGs never changes the flagged set.
    test.groups.push_back(QueryGroup{"extra", {Item{{0.55}, 0}}});
    std::set<std::string> out2 = detect_outlier_qgs(th, test);
    CHECK(out2 == out);
  }
  SUBCASE("low-side mirror") {
    std::vector<double> vals = {-10.0};
    for (int i = 0; i < 999; ++i) vals.push_back(i / 998.0);
    Dataset val = one_feature_dataset({{"v", vals}});
    OutlierThresholds th = fit_outlier_thresholds(val, 5);
    REQUIRE(th.low[0].has_value());
    Dataset test =
        one_feature_dataset({{"lo", {-9.5}}, {"in", {0.1, 0.2}}});
    CHECK(detect_outlier_qgs(th, test) == std::set<std::string>{"lo"});
  }
  SUBCASE("constant feature yields no thresholds") {
    Dataset val = one_feature_dataset({{"v", {3.0, 3.0, 3.0}}});
    OutlierThresholds th = fit_outlier_thresholds(val, 1);
    CHECK(!th.low[0].has_value());
    CHECK(!th.high[0].has_value());
  }
  SUBCASE("a heavy far tail (>1% mass) is not fenced") {
    std::vector<double> vals;
    for (int i = 0; i < 950; ++i) vals.push_back(i / 949.0);
    for (int i = 0; i < 50; ++i) vals.push_back(10.0 + i * 0.001);  // 5%
    Dataset val = one_feature_dataset({{"v", vals}});
    OutlierThresholds th = fit_outlier_thresholds(val, 5);
    CHECK(!th.high[0].has_value());
  }
  SUBCASE("outlier count is non-increasing in G") {
    Rng rng(31);
    std::vector<double> vals;
    for (int i = 0; i < 2000; ++i) vals.push_back(rng.normal());
    for (int i = 0; i < 6; ++i) vals.push_back(12.0 + rng.uniform());
    for (int i = 0; i < 4; ++i) vals.push_back(25.0 + rng.uniform());
    Dataset val = one_feature_dataset({{"v", vals}});
    std::vector<std::pair<std::string, std::vector<double>>> tg;
    for (int i = 0; i < 200; ++i)
      tg.push_back({"t" + std::to_string(i),
                    {rng.normal() * (1.0 + i % 7), i % 9 == 0 ? 14.0 : 0.0}});
    Dataset test = one_feature_dataset(tg);
    test.feature_dim = 1;
    for (QueryGroup& g : test.groups)
      for (Item& it : g.items) it.features.resize(1);
    size_t prev = SIZE_MAX;
    for (int g = 1; g <= 32; ++g) {
      size_t n =
          detect_outlier_qgs(fit_outlier_thresholds(val, g), test).size();
      CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("tune_gap_parameter") {
  SUBCASE("no gaps: every G yields 0%, smallest G returned") {
    std::vector<double> vals;
    for (int i = 0; i < 500; ++i) vals.push_back(i / 499.0);
    Dataset val = one_feature_dataset({{"v", vals}});
    Dataset test = one_feature_dataset({{"t", {0.5}}});
    CHECK(tune_gap_parameter(val, test, 0.01, 1, 16) == 1);
  }
  SUBCASE("returns the G whose fraction is closest to target") {
    // Validation: dense bulk in [0,1] plus one value at 3.0; the gap between
    // them spans ~66 empty bins, so G <= 66 fences values above ~1, and
    // G > 66 fences nothing.
    std::vector<double> vals;
    for (int i = 0; i < 999; ++i) vals.push_back(i / 998.0);
    vals.push_back(3.0);
    Dataset val = one_feature_dataset({{"v", vals}});
    // 100 test QGs, exactly one beyond the fence -> 1% when fenced.
    std::vector<std::pair<std::string, std::vector<double>>> tg;
    for (int i = 0; i < 99; ++i)
      tg.push_back({"t" + std::to_string(i), {0.5}});
    tg.push_back({"far", {2.9}});
    Dataset test = one_feature_dataset(tg);
    int g = tune_gap_parameter(val, test, 0.01, 1, 80);
    CHECK(g == 1);  // fraction is exactly 1% for every small G; ties -> smallest
    // With a target of 0%, the smallest G whose fence spares the far QG wins:
    // the fence sits after the G-th empty bin (bulk ends at bin 33, width
    // 0.03), so 2.9 stops being flagged once 0.03*(34+G) >= 2.9, i.e. G=63.
    int g0 = tune_gap_parameter(val, test, 0.0, 1, 80);
    CHECK(g0 == 63);
  }
}

TEST_CASE("outlier_ndcg restrictions") {
  Dataset test;
  test.feature_dim = 1;
  std::vector<std::vector<double>> scores;
  Rng rng(3);
  for (int q = 0; q < 6; ++q) {
    QueryGroup g;
    g.qid = "q" + std::to_string(q);
    std::vector<double> s;
    for (int i = 0; i < 4; ++i) {
      g.items.push_back(Item{{0.0}, static_cast<int>(rng.below(3))});
      s.push_back(rng.normal());
    }
    g.items[0].relevance = 2;  // keep NDCG defined
    test.groups.push_back(g);
    scores.push_back(s);
  }
  NdcgSummary all = ndcg_summary(test, scores, 5);
  SUBCASE("outlier set == full test set equals the overall mean") {
    std::set<std::string> every;
    for (const QueryGroup& g : test.groups) every.insert(g.qid);
    CHECK(outlier_ndcg(test, scores, every, 5) == doctest::Approx(all.mean));
  }
  SUBCASE("single outlier QG equals that QG's NDCG") {
    std::set<std::string> one{"q2"};
    double want = *all.per_qg[2].second;
    CHECK(outlier_ndcg(test, scores, one, 5) == doctest::Approx(want));
  }
  SUBCASE("random split equals filter-then-average") {
    std::set<std::string> subset{"q0", "q3", "q5"};
    double sum = 0.0;
    int n = 0;
    for (const auto& [qid, v] : all.per_qg)
      if (subset.count(qid) && v) {
        sum += *v;
        ++n;
      }
    CHECK(outlier_ndcg(test, scores, subset, 5) == doctest::Approx(sum / n));
  }
  SUBCASE("empty outlier set is an error") {
    std::set<std::string> none;
    CHECK_THROWS_AS(outlier_ndcg(test, scores, none, 5), Error);
  }
  SUBCASE("unknown outlier qid is an error") {
    std::set<std::string> bad{"nope"};
    CHECK_THROWS_AS(outlier_ndcg(test, scores, bad, 5), Error);
  }
}

TEST_CASE("student t survival function against closed forms") {
  // df=1 is Cauchy: P(T>1) = 1/4.
  CHECK(student_t_sf(1.0, 1.0) == doctest::Approx(0.25).epsilon(1e-10));
  // df=2: P(T>t) = 1/2 - t / (2 sqrt(2 + t^2)).
  for (double t : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    double want = 0.5 - t / (2.0 * std::sqrt(2.0 + t * t));
    CHECK(student_t_sf(t, 2.0) == doctest::Approx(want).epsilon(1e-10));
  }
  // Symmetry.
  CHECK(student_t_sf(-1.3, 7.0) ==
        doctest::Approx(1.0 - student_t_sf(1.3, 7.0)).epsilon(1e-12));
  // Large df approaches the normal tail.
  CHECK(student_t_sf(1.959964, 100000.0) == doctest::Approx(0.025).epsilon(1e-3));
}

TEST_CASE("one-sided Welch t-test") {
  SUBCASE("identical samples give p = 0.5") {
    std::vector<double> a{0.4, 0.5, 0.6};
    TTestResult r = one_sided_t_test(a, a);
    CHECK(r.t == 0.0);
    CHECK(r.p == doctest::Approx(0.5));
  }
  SUBCASE("clear separation with tiny jitter is significant") {
    std::vector<double> a{1.0, 1.0001, 0.9999};
    std::vector<double> b{0.0, 0.0001, -0.0001};
    TTestResult r = one_sided_t_test(a, b);
    CHECK(r.p < 0.001);
  }
  SUBCASE("swapping the samples maps p to 1-p") {
    std::vector<double> a{0.9, 1.1, 1.0, 1.2};
    std::vector<double> b{0.8, 1.0, 0.9, 0.7};
    TTestResult ab = one_sided_t_test(a, b);
    TTestResult ba = one_sided_t_test(b, a);
    CHECK(ab.p == doctest::Approx(1.0 - ba.p).epsilon(1e-12));
  }
  SUBCASE("constant equal samples") {
    std::vector<double> a{1.0, 1.0};
    TTestResult r = one_sided_t_test(a, a);
    CHECK(r.p == 0.5);
  }
  SUBCASE("fewer than 2 trials is an error") {
    std::vector<double> one{1.0};
    std::vector<double> two{1.0, 2.0};
    CHECK_THROWS_AS(one_sided_t_test(one, two), Error);
  }
  SUBCASE("welch df on a known unequal-variance example") {
    // n_a=n_b=2: df = (sa+sb)^2 / (sa^2 + sb^2) with sa=va/2, sb=vb/2.
    std::vector<double> a{0.0, 2.0};   // var 2
    std::vector<double> b{0.0, 10.0};  // var 50
    TTestResult r = one_sided_t_test(a, b);
    double sa = 2.0 / 2.0, sb = 50.0 / 2.0;
    double want_df = (sa + sb) * (sa + sb) / (sa * sa + sb * sb);
    CHECK(r.df == doctest::Approx(want_df).epsilon(1e-12));
    CHECK(r.t == doctest::Approx((1.0 - 5.0) / std::sqrt(sa + sb)));
  }
}

TEST_CASE("metrics report JSON carries the documented keys") {
  Dataset test;
  test.feature_dim = 1;
  test.groups.push_back(QueryGroup{"a", {Item{{0.0}, 1}, Item{{0.0}, 0}}});
  test.groups.push_back(QueryGroup{"b", {Item{{0.0}, 0}, Item{{0.0}, 0}}});
  std::vector<std::vector<double>> scores{{1.0, 0.0}, {0.5, 0.4}};
  std::set<std::string> outliers{"a"};
  MetricsReport r = evaluate_scores(test, scores, 5, &outliers, true);
  CHECK(r.ndcg_mean == doctest::Approx(1.0));
  CHECK(r.n_undefined_qgs == 1);  // "b" has all-zero labels
  nlohmann::json j = r.to_json();
  for (const char* key : {"k", "ndcg_mean", "n_qgs", "n_undefined_qgs",
                          "outlier_ndcg", "ndcg_per_qg"})
    CHECK(j.contains(key));
}
