#include "ltr/semi.hpp"

#include <algorithm>
#include <cmath>

#include "ltr/rng.hpp"

namespace ltr {

std::string binning_mode_name(BinningMode m) {
  return m == BinningMode::equal_width ? "equal_width" : "equal_frequency";
}

BinningMode binning_mode_from_name(const std::string& s) {
  if (s == "equal_width") return BinningMode::equal_width;
  if (s == "equal_frequency") return BinningMode::equal_frequency;
  fail(ErrorCode::InvalidConfig, "unknown binning mode: " + s);
}

Scorer scorer_from_bundle(ModelBundle& bundle) {
  return [&bundle](const Tensor& features) {
    return score_batch(bundle, features);
  };
}

std::vector<int> bucketize_scores(const std::vector<double>& scores,
                                  BinningMode mode) {
  if (scores.empty()) fail(ErrorCode::EmptyInput, "no scores to bucketize");
  const int n = static_cast<int>(scores.size());
  std::vector<int> labels(n, 0);
  auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mn == mx) return labels;  // degenerate: every pseudo-label 0

  if (mode == BinningMode::equal_width) {
    const double width = (mx - mn) / kPseudoLabelBuckets;
    for (int i = 0; i < n; ++i) {
      int b = static_cast<int>((scores[i] - mn) / width);
      labels[i] = std::min(b, kPseudoLabelBuckets - 1);
    }
  } else {
    // Thresholds at the k*n/31 order statistics; bucket = #thresholds below
    // the score, which keeps ties on one label and the map monotone.
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (int b = 1; b < kPseudoLabelBuckets; ++b) {
      size_t idx = static_cast<size_t>(
          static_cast<double>(b) * n / kPseudoLabelBuckets);
      if (idx >= sorted.size()) idx = sorted.size() - 1;
      cuts.push_back(sorted[idx]);
    }
    for (int i = 0; i < n; ++i) {
      int b = 0;
      for (double c : cuts)
        if (scores[i] > c) ++b;
      labels[i] = b;
    }
  }
  return labels;
}

Dataset pseudo_label(const Scorer& scorer, const Dataset& unlabeled,
                     BinningMode mode) {
  validate_dataset(unlabeled);
  std::vector<double> scores = scorer(features_matrix(unlabeled));
  if (scores.size() != unlabeled.n_items())
    fail(ErrorCode::ShapeMismatch, "scorer returned wrong score count");
  std::vector<int> labels = bucketize_scores(scores, mode);
  Dataset out = unlabeled;
  out.label_kind = LabelKind::graded;
  size_t idx = 0;
  for (QueryGroup& g : out.groups)
    for (Item& item : g.items) item.relevance = labels[idx++];
  return out;
}

// --- PCA ---------------------------------------------------------------------

namespace {

constexpr double kPowerTol = 1e-9;
constexpr int kPowerMaxIter = 10000;

// Deterministic unit start vector for one component.
std::vector<double> start_vector(int d, int component) {
  Rng rng(derive_seed(0x9CA0u, static_cast<uint64_t>(component)));
  std::vector<double> v(d);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

void fix_sign(std::vector<double>& v) {
  int arg = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = static_cast<int>(i);
  if (v[arg] < 0.0)
    for (double& x : v) x = -x;
}

}  // namespace

PcaModel fit_pca(const Tensor& features, int k) {
  const int n = features.rows(), d = features.cols();
  if (k < 1) fail(ErrorCode::InvalidConfig, "pca: k must be >= 1");
  if (k > d) fail(ErrorCode::InvalidConfig, "pca: k exceeds feature dim");
  if (n < k) fail(ErrorCode::InvalidDataset, "pca: fewer items than components");
  if (n < 2) fail(ErrorCode::InvalidDataset, "pca: need at least 2 items");

  PcaModel model;
  model.k = k;
  model.mean.assign(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) model.mean[j] += features.at(i, j);
  for (int j = 0; j < d; ++j) model.mean[j] /= n;

  // Centered covariance, d x d.
  Tensor cov(d, d);
  for (int i = 0; i < n; ++i) {
    std::vector<double> c(d);
    for (int j = 0; j < d; ++j) c[j] = features.at(i, j) - model.mean[j];
    for (int a = 0; a < d; ++a) {
      if (c[a] == 0.0) continue;
      double* row = cov.row_ptr(a);
      for (int b = 0; b < d; ++b) row[b] += c[a] * c[b];
    }
  }
  for (double& v : cov.data()) v /= (n - 1);

  model.components = Tensor(k, d);
  std::vector<std::vector<double>> done;
  double lambda1 = 0.0;
  for (int comp = 0; comp < k; ++comp) {
    std::vector<double> v = start_vector(d, comp);
    double lambda = 0.0;
    for (int iter = 0; iter < kPowerMaxIter; ++iter) {
      // w = C v, then re-orthogonalize against found components.
      std::vector<double> w(d, 0.0);
      for (int a = 0; a < d; ++a) {
        const double* row = cov.row_ptr(a);
        double s = 0.0;
        for (int b = 0; b < d; ++b) s += row[b] * v[b];
        w[a] = s;
      }
      for (const std::vector<double>& u : done) {
        double proj = 0.0;
        for (int a = 0; a < d; ++a) proj += w[a] * u[a];
        for (int a = 0; a < d; ++a) w[a] -= proj * u[a];
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        lambda = 0.0;
        break;
      }
      lambda = 0.0;
      for (int a = 0; a < d; ++a) lambda += v[a] * w[a];
      double diff = 0.0;
      for (int a = 0; a < d; ++a) {
        double next = w[a] / norm;
        diff += (next - v[a]) * (next - v[a]);
        v[a] = next;
      }
      if (std::sqrt(diff) < kPowerTol) break;
    }
    if (comp == 0) lambda1 = lambda;
    if (lambda <= 0.0 || (lambda1 > 0.0 && lambda < 1e-9 * lambda1) ||
        lambda1 == 0.0)
      fail(ErrorCode::RankDeficient,
           "pca: only " + std::to_string(comp) +
               " nonzero eigenvalues, requested " + std::to_string(k));
    // Deflate: C <- C - lambda v v^T.
    for (int a = 0; a < d; ++a) {
      double* row = cov.row_ptr(a);
      for (int b = 0; b < d; ++b) row[b] -= lambda * v[a] * v[b];
    }
    fix_sign(v);
    std::copy(v.begin(), v.end(), model.components.row_ptr(comp));
    done.push_back(std::move(v));
    model.eigenvalues.push_back(lambda);
  }
  return model;
}

Dataset enrich(const Dataset& ds, const PcaModel& model) {
  validate_dataset(ds);
  if (ds.feature_dim != model.components.cols())
    fail(ErrorCode::ShapeMismatch, "enrich: PCA fitted for different dim");
  Dataset out = ds;
  out.feature_dim = ds.feature_dim + model.k;
  const int d = ds.feature_dim;
  for (QueryGroup& g : out.groups)
    for (Item& item : g.items) {
      item.features.reserve(d + model.k);
      for (int c = 0; c < model.k; ++c) {
        const double* comp = model.components.row_ptr(c);
        double proj = 0.0;
        for (int j = 0; j < d; ++j)
          proj += (item.features[j] - model.mean[j]) * comp[j];
        item.features.push_back(proj);
      }
    }
  return out;
}

Checkpoint PcaModel::to_checkpoint() const {
  Checkpoint ck;
  ck.configs["type"] = "pca_model";
  ck.configs["k"] = k;
  ck.tensors.emplace_back("pca.mean", Tensor::row(mean));
  ck.tensors.emplace_back("pca.components", components);
  ck.tensors.emplace_back("pca.eigenvalues", Tensor::row(eigenvalues));
  return ck;
}

PcaModel PcaModel::from_checkpoint(const Checkpoint& ck) {
  if (!ck.configs.contains("type") || ck.configs.at("type") != "pca_model")
    fail(ErrorCode::CorruptCheckpoint, "not a PCA checkpoint");
  PcaModel m;
  m.k = ck.configs.at("k").get<int>();
  const Tensor* mean = ck.find("pca.mean");
  const Tensor* comps = ck.find("pca.components");
  const Tensor* eig = ck.find("pca.eigenvalues");
  if (!mean || !comps || !eig)
    fail(ErrorCode::CorruptCheckpoint, "PCA checkpoint missing tensors");
  if (comps->rows() != m.k || mean->cols() != comps->cols() ||
      eig->cols() != m.k)
    fail(ErrorCode::ShapeMismatch, "PCA checkpoint shape mismatch");
  m.mean = mean->data();
  m.components = *comps;
  m.eigenvalues = eig->data();
  return m;
}

}  // namespace ltr
