#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ltr/dataset.hpp"
#include "ltr/model.hpp"

namespace ltr {

enum class BinningMode { equal_width, equal_frequency };
std::string binning_mode_name(BinningMode m);
BinningMode binning_mode_from_name(const std::string& s);

// Scores every item of a dataset (one value per item, stacked order).
using Scorer = std::function<std::vector<double>(const Tensor& features)>;

Scorer scorer_from_bundle(ModelBundle& bundle);

// Relabels the dataset with score buckets 0..30: equal-width intervals over
// [min, max] of all scores (max maps to bucket 30); all-equal scores collapse
// to bucket 0. Equal-frequency binning is the config alternative.
inline constexpr int kPseudoLabelBuckets = 31;
Dataset pseudo_label(const Scorer& scorer, const Dataset& unlabeled,
                     BinningMode mode = BinningMode::equal_width);

// Bucket assignment on raw scores; exposed for tests and the CLI.
std::vector<int> bucketize_scores(const std::vector<double>& scores,
                                  BinningMode mode);

struct PcaModel {
  int k = 0;
  std::vector<double> mean;       // per-feature
  Tensor components;              // k x d, rows orthonormal
  std::vector<double> eigenvalues;

  Checkpoint to_checkpoint() const;
  static PcaModel from_checkpoint(const Checkpoint& ck);
};

// Top-k eigenvectors of the centered covariance via power iteration with
// deflation (eigenvector-change tolerance 1e-9, at most 1e4 iterations);
// components are sign-fixed so their largest-magnitude coordinate is
// positive. Fails on k > d or when fewer than k nonzero eigenvalues exist.
PcaModel fit_pca(const Tensor& features, int k);

// Appends each item's k component projections: feature_dim becomes d + k.
Dataset enrich(const Dataset& ds, const PcaModel& model);

}  // namespace ltr
