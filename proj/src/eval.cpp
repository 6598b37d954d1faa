#include "ltr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ltr {

namespace {

void check_permutation(const std::vector<int>& pi) {
  std::vector<uint8_t> seen(pi.size(), 0);
  for (int r : pi) {
    if (r < 1 || r > static_cast<int>(pi.size()) || seen[r - 1])
      fail(ErrorCode::InvalidConfig, "dcg: pi is not a permutation of 1..L");
    seen[r - 1] = 1;
  }
}

double gain(int label) { return std::pow(2.0, label) - 1.0; }

}  // namespace

double dcg(const std::vector<int>& pi, const std::vector<int>& labels, int k) {
  if (pi.size() != labels.size())
    fail(ErrorCode::ShapeMismatch, "dcg: pi/labels length mismatch");
  check_permutation(pi);
  const int n = static_cast<int>(pi.size());
  std::vector<int> item_at_rank(n);
  for (int i = 0; i < n; ++i) item_at_rank[pi[i] - 1] = i;
  double sum = 0.0;
  const int top = std::min(k, n);
  for (int r = 1; r <= top; ++r)
    sum += gain(labels[item_at_rank[r - 1]]) / std::log2(1.0 + r);
  return sum;
}

std::vector<int> ranking_from_scores(const std::vector<double>& scores) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> pi(n);
  for (int r = 0; r < n; ++r) pi[order[r]] = r + 1;
  return pi;
}

std::vector<int> ideal_ranking(const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return labels[a] > labels[b]; });
  std::vector<int> pi(n);
  for (int r = 0; r < n; ++r) pi[order[r]] = r + 1;
  return pi;
}

std::optional<double> ndcg_at_k(const std::vector<double>& scores,
                                const std::vector<int>& labels, int k) {
  if (scores.size() != labels.size())
    fail(ErrorCode::ShapeMismatch, "ndcg: scores/labels length mismatch");
  if (scores.empty()) fail(ErrorCode::InvalidDataset, "ndcg: empty QG");
  double ideal = dcg(ideal_ranking(labels), labels, k);
  if (ideal == 0.0) return std::nullopt;
  return dcg(ranking_from_scores(scores), labels, k) / ideal;
}

NdcgSummary ndcg_summary(const Dataset& ds,
                         const std::vector<std::vector<double>>& scores,
                         int k) {
  if (scores.size() != ds.groups.size())
    fail(ErrorCode::ShapeMismatch, "ndcg_summary: one score list per QG required");
  NdcgSummary s;
  double sum = 0.0;
  for (size_t q = 0; q < ds.groups.size(); ++q) {
    const QueryGroup& g = ds.groups[q];
    std::vector<int> labels;
    labels.reserve(g.items.size());
    for (const Item& it : g.items) {
      if (!it.relevance)
        fail(ErrorCode::InvalidDataset,
             "qid " + g.qid + ": unlabeled item in evaluation set");
      labels.push_back(*it.relevance);
    }
    if (scores[q].size() != g.items.size())
      fail(ErrorCode::ShapeMismatch,
           "qid " + g.qid + ": score count mismatch");
    std::optional<double> v = ndcg_at_k(scores[q], labels, k);
    s.per_qg.emplace_back(g.qid, v);
    if (v) {
      sum += *v;
      ++s.n_defined;
    } else {
      ++s.n_undefined;
    }
  }
  s.mean = s.n_defined ? sum / s.n_defined : 0.0;
  return s;
}

// --- outlier detection ----------------------------------------------------------

nlohmann::json OutlierThresholds::to_json() const {
  nlohmann::json feats = nlohmann::json::array();
  for (size_t f = 0; f < low.size(); ++f) {
    feats.push_back({{"feature", f + 1},
                     {"low", low[f] ? nlohmann::json(*low[f])
                                    : nlohmann::json(nullptr)},
                     {"high", high[f] ? nlohmann::json(*high[f])
                                      : nlohmann::json(nullptr)}});
  }
  return {{"bins", spec.bins},
          {"gap", spec.gap},
          {"max_tail_mass", spec.max_tail_mass},
          {"features", feats}};
}

OutlierThresholds fit_outlier_thresholds(const Dataset& validation, int gap) {
  if (validation.groups.empty())
    fail(ErrorCode::InvalidDataset, "outlier detection: empty validation set");
  if (gap < 1) fail(ErrorCode::InvalidConfig, "gap parameter must be >= 1");
  OutlierThresholds th;
  th.spec.gap = gap;
  const int nbins = th.spec.bins;
  const int d = validation.feature_dim;
  th.low.assign(d, std::nullopt);
  th.high.assign(d, std::nullopt);

  const size_t n_items = validation.n_items();
  const double tail_limit = th.spec.max_tail_mass * static_cast<double>(n_items);

  std::vector<double> values(n_items);
  for (int f = 0; f < d; ++f) {
    size_t idx = 0;
    for (const QueryGroup& g : validation.groups)
      for (const Item& it : g.items) values[idx++] = it.features[f];
    auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    double mn = *mn_it, mx = *mx_it;
    if (mn == mx) continue;  // constant feature: single bin, no thresholds
    const double width = (mx - mn) / nbins;
    std::vector<size_t> hist(nbins, 0);
    for (double v : values) {
      int b = static_cast<int>((v - mn) / width);
      if (b >= nbins) b = nbins - 1;  // right-closed last bin holds the max
      ++hist[b];
    }
    std::vector<size_t> above(nbins, 0);  // items in bins > b
    for (int b = nbins - 2; b >= 0; --b) above[b] = above[b + 1] + hist[b + 1];

    // Left-to-right: the scan stops once gap empty bins run in a row; if the
    // mass beyond the run is light, everything above the gap-th empty bin is
    // out of range (values inside the rest of the gap included).
    for (int b = 0; b < nbins;) {
      if (hist[b] != 0) {
        ++b;
        continue;
      }
      int run_start = b;
      while (b < nbins && hist[b] == 0) ++b;
      int run_end = b - 1;
      if (run_end - run_start + 1 >= gap &&
          static_cast<double>(above[run_end]) < tail_limit) {
        th.high[f] = mn + width * (run_start + gap);
        break;
      }
    }
    // Right-to-left mirror for the low threshold.
    std::vector<size_t> below(nbins + 1, 0);  // items in bins < b
    for (int b = 1; b <= nbins; ++b) below[b] = below[b - 1] + hist[b - 1];
    for (int b = nbins - 1; b >= 0;) {
      if (hist[b] != 0) {
        --b;
        continue;
      }
      int run_end = b;
      while (b >= 0 && hist[b] == 0) --b;
      int run_start = b + 1;
      if (run_end - run_start + 1 >= gap &&
          static_cast<double>(below[run_start]) < tail_limit) {
        th.low[f] = mn + width * (run_end - gap + 1);
        break;
      }
    }
  }
  return th;
}

std::set<std::string> detect_outlier_qgs(const OutlierThresholds& th,
                                         const Dataset& test) {
  if (static_cast<int>(th.low.size()) != test.feature_dim)
    fail(ErrorCode::ShapeMismatch,
         "outlier thresholds fitted for a different feature dim");
  std::set<std::string> out;
  for (const QueryGroup& g : test.groups) {
    bool flagged = false;
    for (const Item& it : g.items) {
      for (int f = 0; f < test.feature_dim && !flagged; ++f) {
        double v = it.features[f];
        if ((th.high[f] && v > *th.high[f]) || (th.low[f] && v < *th.low[f]))
          flagged = true;
      }
      if (flagged) break;
    }
    if (flagged) out.insert(g.qid);
  }
  return out;
}

int tune_gap_parameter(const Dataset& validation, const Dataset& test,
                       double target_fraction, int g_min, int g_max) {
  if (g_min < 1 || g_max < g_min)
    fail(ErrorCode::InvalidConfig, "tune_gap_parameter: bad G range");
  int best_g = g_min;
  double best_diff = std::numeric_limits<double>::infinity();
  const double n_test = static_cast<double>(test.groups.size());
  for (int g = g_min; g <= g_max; ++g) {
    OutlierThresholds th = fit_outlier_thresholds(validation, g);
    double frac = detect_outlier_qgs(th, test).size() / n_test;
    double diff = std::abs(frac - target_fraction);
    if (diff < best_diff) {
      best_diff = diff;
      best_g = g;
    }
  }
  return best_g;
}

double outlier_ndcg(const Dataset& test,
                    const std::vector<std::vector<double>>& scores,
                    const std::set<std::string>& outlier_qids, int k) {
  if (outlier_qids.empty())
    fail(ErrorCode::InvalidConfig, "outlier_ndcg: empty outlier set");
  for (const std::string& q : outlier_qids)
    if (!test.find(q))
      fail(ErrorCode::UnknownQid, "outlier qid not in test set: " + q);
  NdcgSummary s = ndcg_summary(test, scores, k);
  double sum = 0.0;
  size_t n = 0;
  for (const auto& [qid, v] : s.per_qg) {
    if (!outlier_qids.count(qid) || !v) continue;
    sum += *v;
    ++n;
  }
  return n ? sum / n : 0.0;
}

// --- significance ----------------------------------------------------------------

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                 a * std::log(x) + b * std::log1p(-x);
  double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_sf(double t, double df) {
  double x = df / (df + t * t);
  double half_tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

TTestResult one_sided_t_test(const std::vector<double>& a,
                             const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    fail(ErrorCode::InvalidConfig, "t-test needs >= 2 trials per sample");
  auto mean_var = [](const std::vector<double>& v) {
    double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= (v.size() - 1);
    return std::pair<double, double>{m, s2};
  };
  auto [ma, va] = mean_var(a);
  auto [mb, vb] = mean_var(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  TTestResult r;
  if (sa + sb == 0.0) {
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.t = 0.0;
      r.p = 0.5;
    } else {
      r.t = ma > mb ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
      r.p = ma > mb ? 0.0 : 1.0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  // Welch-Satterthwaite degrees of freedom.
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_sf(r.t, r.df);
  return r;
}

nlohmann::json TrialStats::to_json() const {
  return {{"values", values}, {"mean", mean}, {"stddev", stddev}};
}

TrialStats trial_stats(const std::vector<double>& values) {
  TrialStats s;
  s.values = values;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / (values.size() - 1));
  }
  return s;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j{{"k", k},
                   {"ndcg_mean", ndcg_mean},
                   {"n_qgs", n_qgs},
                   {"n_undefined_qgs", n_undefined_qgs}};
  j["outlier_ndcg"] = outlier_ndcg_mean ? nlohmann::json(*outlier_ndcg_mean)
                                        : nlohmann::json(nullptr);
  if (n_outlier_qgs) j["n_outlier_qgs"] = *n_outlier_qgs;
  if (ndcg_per_qg) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& [qid, v] : *ndcg_per_qg)
      per.push_back({{"qid", qid},
                     {"ndcg", v ? nlohmann::json(*v) : nlohmann::json(nullptr)}});
    j["ndcg_per_qg"] = per;
  }
  return j;
}

MetricsReport evaluate_scores(const Dataset& test,
                              const std::vector<std::vector<double>>& scores,
                              int k, const std::set<std::string>* outlier_qids,
                              bool include_per_qg) {
  NdcgSummary s = ndcg_summary(test, scores, k);
  MetricsReport r;
  r.k = k;
  r.ndcg_mean = s.mean;
  r.n_qgs = test.groups.size();
  r.n_undefined_qgs = s.n_undefined;
  if (outlier_qids && !outlier_qids->empty()) {
    r.outlier_ndcg_mean = outlier_ndcg(test, scores, *outlier_qids, k);
    r.n_outlier_qgs = outlier_qids->size();
  }
  if (include_per_qg) r.ndcg_per_qg = s.per_qg;
  return r;
}

}  // namespace ltr
