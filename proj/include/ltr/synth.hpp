#pragma once

#include <cstdint>

#include "ltr/dataset.hpp"

namespace ltr {

// Synthetic label-scarce ranking data: items belong to one of two latent
// clusters, relevance equals the cluster id, and the cluster signal is
// spread redundantly over the first n_signal_dims features (the rest are
// pure distractor noise). Every QG mixes both clusters so NDCG is defined.
struct SynthConfig {
  int n_groups = 2000;
  int items_per_group = 20;
  int feature_dim = 30;
  int n_signal_dims = 10;
  double separation = 1.0;        // per-dim cluster center offset
  double noise = 1.0;             // per-dim observation noise
  double distractor_scale = 2.0;  // stddev of non-signal dims
  double positive_rate = 0.3;
  uint64_t seed = 1;
};

Dataset make_synthetic(const SynthConfig& cfg);

}  // namespace ltr
