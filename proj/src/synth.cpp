#include "ltr/synth.hpp"

#include <algorithm>
#include <string>

#include "ltr/rng.hpp"

namespace ltr {

Dataset make_synthetic(const SynthConfig& cfg) {
  if (cfg.n_groups < 1 || cfg.items_per_group < 2)
    fail(ErrorCode::InvalidConfig, "synth: need >= 1 group of >= 2 items");
  if (cfg.n_signal_dims < 1 || cfg.n_signal_dims > cfg.feature_dim)
    fail(ErrorCode::InvalidConfig, "synth: bad signal dim count");
  Rng rng(cfg.seed);
  Dataset ds;
  ds.feature_dim = cfg.feature_dim;
  ds.label_kind = LabelKind::graded;
  const int L = cfg.items_per_group;
  for (int q = 0; q < cfg.n_groups; ++q) {
    QueryGroup g;
    g.qid = std::to_string(q + 1);
    // Mix both clusters in every QG.
    int n_pos = 0;
    for (int i = 0; i < L; ++i)
      if (rng.uniform() < cfg.positive_rate) ++n_pos;
    n_pos = std::clamp(n_pos, 1, L - 1);
    for (int i = 0; i < L; ++i) {
      int cluster = i < n_pos ? 1 : 0;
      Item item;
      item.relevance = cluster;
      item.features.resize(cfg.feature_dim);
      for (int j = 0; j < cfg.feature_dim; ++j) {
        if (j < cfg.n_signal_dims) {
          double center = cluster == 1 ? cfg.separation : 0.0;
          item.features[j] = center + cfg.noise * rng.normal();
        } else {
          item.features[j] = cfg.distractor_scale * rng.normal();
        }
      }
      g.items.push_back(std::move(item));
    }
    // Shuffle item order so cluster id is not positional.
    rng.shuffle(g.items);
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

}  // namespace ltr
