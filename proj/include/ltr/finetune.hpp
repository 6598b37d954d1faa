#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ltr/dataset.hpp"
#include "ltr/eval.hpp"
#include "ltr/model.hpp"

namespace ltr {

enum class FinetuneStrategy { linear_probe, multilayer_probe, full_finetune };
std::string finetune_strategy_name(FinetuneStrategy s);
FinetuneStrategy finetune_strategy_from_name(const std::string& s);

struct FinetuneConfig {
  FinetuneStrategy strategy = FinetuneStrategy::full_finetune;
  HeadKind head = HeadKind::mlp3;  // FF head; probes pin their own head kind
  int head_hidden = 0;             // 0 -> encoder width
  // FF: head-only epochs then full epochs; probes train head_epochs+full_epochs
  // with the encoder frozen throughout. A scratch run (no pretrained encoder)
  // trains everything for the whole budget.
  int head_epochs = 100;
  int full_epochs = 100;
  double lr = 5e-5;
  int batch_items = 1000;
  uint64_t seed = 0;
  int ndcg_k = 5;

  void validate() const;
};

// |delta NDCG| of swapping items i and j in the current score-induced
// ranking, for every pair with label_i > label_j (gain 2^y - 1, discount
// 1/log2(1+rank), full-list, ideal-DCG normalized); zero elsewhere.
Tensor lambdarank_pair_weights(const std::vector<double>& scores,
                               const std::vector<int>& labels);

// Pairwise logistic loss weighted by lambdarank_pair_weights (sigma=1),
// averaged over QGs with >= 2 items and >= 2 distinct labels.
Var lambdarank_loss(Tape& t, Var scores, const std::vector<int>& labels,
                    const std::vector<QgSpan>& spans);

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "head", "full", "probe", "combine"
  double train_loss = 0.0;
  double val_ndcg = 0.0;
};

struct FinetuneResult {
  ModelBundle best;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_ndcg = 0.0;
};

// Attaches a scoring head to the given encoder and trains per the strategy,
// evaluating validation NDCG@k after every epoch and retaining the best
// checkpoint (ties -> earliest epoch). `pretrained` distinguishes the FF
// schedule (head-only warmup) from scratch training.
FinetuneResult finetune_run(const ModelBundle& encoder_bundle,
                            bool pretrained, const Dataset& train_labeled,
                            const Dataset& val, const FinetuneConfig& cfg,
                            std::ostream* log = nullptr);

// Per-QG scores of a scoring bundle over a dataset (eval mode).
std::vector<std::vector<double>> score_dataset(ModelBundle& bundle,
                                               const Dataset& ds);

// --- SimCLR-Rank + SimSiam style combiner ---------------------------------------

struct CombineConfig {
  double dropout = 0.0;  // 0.0 or 0.7 in the reference recipe
  int epochs = 200;
  double lr = 5e-5;
  int batch_items = 1000;
  uint64_t seed = 0;
  int ndcg_k = 5;
};

// Frozen encoders, concatenated embeddings -> batchnorm -> dropout -> linear
// scorer; only the linear layer trains.
struct CombinedModel {
  ModelBundle enc_a, enc_b;
  BatchNormLayer bn;
  double dropout_p = 0.0;
  LinearLayer scorer;
};

struct CombineResult {
  CombinedModel model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_ndcg = 0.0;
};

CombineResult combine_encoders(const ModelBundle& a, const ModelBundle& b,
                               const Dataset& train_labeled, const Dataset& val,
                               const CombineConfig& cfg,
                               std::ostream* log = nullptr);

std::vector<std::vector<double>> score_dataset_combined(CombinedModel& m,
                                                        const Dataset& ds);

Checkpoint combined_to_checkpoint(const CombinedModel& m);
CombinedModel combined_from_checkpoint(const Checkpoint& ck);

}  // namespace ltr
