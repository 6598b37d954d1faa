#pragma once

#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltr/dataset.hpp"

namespace ltr {

// pi[i] is the 1-based rank of item i. DCG = sum over ranks r <= k of
// (2^y - 1)/log2(1 + r); accumulation runs in rank order so tied labels
// produce bit-identical sums regardless of tie placement.
double dcg(const std::vector<int>& pi, const std::vector<int>& labels,
           int k = std::numeric_limits<int>::max());

// Ranking induced by descending stable sort (ties keep original order).
std::vector<int> ranking_from_scores(const std::vector<double>& scores);
std::vector<int> ideal_ranking(const std::vector<int>& labels);

// DCG@k(pi)/DCG@k(pi*). QGs whose ideal DCG is zero (all labels produce zero
// gain) have no defined value and return nullopt.
std::optional<double> ndcg_at_k(const std::vector<double>& scores,
                                const std::vector<int>& labels, int k = 5);

struct NdcgSummary {
  double mean = 0.0;
  size_t n_defined = 0;
  size_t n_undefined = 0;
  std::vector<std::pair<std::string, std::optional<double>>> per_qg;
};
NdcgSummary ndcg_summary(const Dataset& ds,
                         const std::vector<std::vector<double>>& scores,
                         int k = 5);

// --- histogram-gap outlier detection -----------------------------------------
// Per feature, a 100-bin histogram over the validation values; scanning in
// from either end, the first run of >= gap empty bins with < max_tail_mass of
// the validation items beyond it sets a threshold. A test QG is an outlier
// iff any item has any feature strictly beyond a threshold.

struct OutlierSpec {
  int bins = 100;
  int gap = 1;
  double max_tail_mass = 0.01;
};

struct OutlierThresholds {
  OutlierSpec spec;
  std::vector<std::optional<double>> low, high;  // per feature
  nlohmann::json to_json() const;
};

OutlierThresholds fit_outlier_thresholds(const Dataset& validation, int gap);
std::set<std::string> detect_outlier_qgs(const OutlierThresholds& thresholds,
                                         const Dataset& test);
// Gap value whose outlier fraction of test QGs is closest to target
// (ties -> smaller gap).
int tune_gap_parameter(const Dataset& validation, const Dataset& test,
                       double target_fraction = 0.01, int g_min = 1,
                       int g_max = 64);

// Mean NDCG@k over the outlier QGs only (undefined QGs excluded).
double outlier_ndcg(const Dataset& test,
                    const std::vector<std::vector<double>>& scores,
                    const std::set<std::string>& outlier_qids, int k = 5);

// --- significance -------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double p = 0.5;
  double df = 0.0;
};

// Welch's one-sided two-sample t-test of mean(a) > mean(b).
TTestResult one_sided_t_test(const std::vector<double>& a,
                             const std::vector<double>& b);

// P(T > t) for Student's t with df degrees of freedom. Exposed for tests.
double student_t_sf(double t, double df);

struct TrialStats {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1)
  nlohmann::json to_json() const;
};
TrialStats trial_stats(const std::vector<double>& values);

// --- report --------------------------------------------------------------------

struct MetricsReport {
  int k = 5;
  double ndcg_mean = 0.0;
  size_t n_qgs = 0;
  size_t n_undefined_qgs = 0;
  std::optional<double> outlier_ndcg_mean;
  std::optional<size_t> n_outlier_qgs;
  std::optional<std::vector<std::pair<std::string, std::optional<double>>>>
      ndcg_per_qg;
  nlohmann::json to_json() const;
};

MetricsReport evaluate_scores(const Dataset& test,
                              const std::vector<std::vector<double>>& scores,
                              int k = 5,
                              const std::set<std::string>* outlier_qids = nullptr,
                              bool include_per_qg = false);

}  // namespace ltr
