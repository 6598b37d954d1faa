#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ltr/augment.hpp"
#include "ltr/dataset.hpp"
#include "ltr/model.hpp"

namespace ltr {

enum class PretrainMethod { simclr, simclr_rank, simclr_sample, simsiam };
std::string pretrain_method_name(PretrainMethod m);
PretrainMethod pretrain_method_from_name(const std::string& s);

struct PretrainConfig {
  PretrainMethod method = PretrainMethod::simclr_rank;
  double tau = 0.1;
  AugmentSpec aug;
  // Item budget per batch; whole QGs are packed greedily, an oversized QG
  // forms its own batch. SimCLR's all-pairs negatives need the small budget.
  int batch_items = 200000;
  int epochs = 300;
  double lr = 5e-4;
  uint64_t seed = 0;
  int fake_group_size = 0;  // simclr_sample; 0 -> mean QG size of the dataset
  int head_hidden = 0;      // projector/predictor hidden dim; 0 -> width
  bool standardize = false;

  void validate() const;
};

// --- losses --------------------------------------------------------------------
// z0/z1 (and p0/p1) hold the two views' projected embeddings, one row per
// item, rows aligned across views.

// InfoNCE over the whole batch: every other augmented item is a negative
// (only the self term is excluded).
Var simclr_loss(Tape& t, Var z0, Var z1, double tau);

// Negatives restricted to the item's own query group; computed per-QG block,
// never materializing the full batch similarity matrix.
Var simclr_rank_loss(Tape& t, Var z0, Var z1, const std::vector<QgSpan>& spans,
                     double tau);

// Items permuted into fake query groups of size fake_group_size (drawn from
// rng once per call, i.e. once per epoch), then scored like simclr_rank.
Var simclr_sample_loss(Tape& t, Var z0, Var z1, int fake_group_size,
                       Rng& epoch_rng, double tau);

// -0.5 * mean_i[cos(p0_i, sg(z1_i)) + cos(p1_i, sg(z0_i))].
Var simsiam_loss(Tape& t, Var p0, Var p1, Var z0, Var z1);

// --- the training loop -----------------------------------------------------------

struct PretrainResult {
  ModelBundle bundle;
  std::vector<double> epoch_losses;
  std::vector<double> val_losses;  // empty when no validation set given
};

// Trains encoder+projector(+predictor) with Adam for the configured epochs.
// Labels are ignored. Per-epoch JSON lines {"epoch","loss","wall_ms"[,"val_loss"]}
// go to log when given.
PretrainResult pretrain_run(const Dataset& train, const Dataset* val,
                            const TabularResNetConfig& encoder_cfg,
                            const PretrainConfig& cfg,
                            std::ostream* log = nullptr);

}  // namespace ltr
