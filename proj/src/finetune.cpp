#include "ltr/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include <json.hpp>

namespace ltr {

std::string finetune_strategy_name(FinetuneStrategy s) {
  switch (s) {
    case FinetuneStrategy::linear_probe: return "lp";
    case FinetuneStrategy::multilayer_probe: return "mp";
    case FinetuneStrategy::full_finetune: return "ff";
  }
  return "ff";
}

FinetuneStrategy finetune_strategy_from_name(const std::string& s) {
  if (s == "lp" || s == "linear_probe") return FinetuneStrategy::linear_probe;
  if (s == "mp" || s == "multilayer_probe")
    return FinetuneStrategy::multilayer_probe;
  if (s == "ff" || s == "full_finetune") return FinetuneStrategy::full_finetune;
  fail(ErrorCode::InvalidConfig, "unknown finetune strategy: " + s);
}

void FinetuneConfig::validate() const {
  if (head_epochs + full_epochs < 1)
    fail(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (batch_items < 1)
    fail(ErrorCode::InvalidConfig, "batch_items must be >= 1");
  if (!(lr > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be > 0");
  if (ndcg_k < 1) fail(ErrorCode::InvalidConfig, "ndcg_k must be >= 1");
}

namespace {

double gain(int label) { return std::pow(2.0, label) - 1.0; }

bool contributes(const std::vector<int>& labels) {
  if (labels.size() < 2) return false;
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i] != labels[0]) return true;
  return false;
}

}  // namespace

// Weights derive from the current score-induced ranking and are treated as
// constants by the gradient, per the standard LambdaRank construction.
Tensor lambdarank_pair_weights(const std::vector<double>& scores,
                               const std::vector<int>& labels) {
  const int n = static_cast<int>(scores.size());
  Tensor w(n, n);
  std::vector<int> pi = ranking_from_scores(scores);
  double ideal = dcg(ideal_ranking(labels), labels);
  if (ideal == 0.0) return w;
  std::vector<double> disc(n);
  for (int i = 0; i < n; ++i) disc[i] = 1.0 / std::log2(1.0 + pi[i]);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (labels[i] <= labels[j]) continue;
      double delta = std::abs((gain(labels[i]) - gain(labels[j])) *
                              (disc[i] - disc[j])) /
                     ideal;
      w.at(i, j) = delta;
    }
  return w;
}

Var lambdarank_loss(Tape& t, Var scores, const std::vector<int>& labels,
                    const std::vector<QgSpan>& spans) {
  const Tensor& sv = scores.val();
  if (sv.cols() != 1)
    fail(ErrorCode::ShapeMismatch, "lambdarank_loss: scores must be n x 1");
  if (static_cast<size_t>(sv.rows()) != labels.size())
    fail(ErrorCode::ShapeMismatch, "lambdarank_loss: labels length mismatch");
  int n_contributing = 0;
  Var total = leaf(t, Tensor::scalar(0.0), false);
  for (const QgSpan& span : spans) {
    if (span.len < 1 || span.start < 0 || span.start + span.len > sv.rows())
      fail(ErrorCode::InvalidDataset, "lambdarank_loss: empty or bad QG span");
    std::vector<int> qg_labels(labels.begin() + span.start,
                               labels.begin() + span.start + span.len);
    if (!contributes(qg_labels)) continue;
    ++n_contributing;
    std::vector<double> qg_scores(span.len);
    for (int i = 0; i < span.len; ++i) qg_scores[i] = sv.at(span.start + i, 0);
    Tensor w = lambdarank_pair_weights(qg_scores, qg_labels);
    Var s_q = slice_rows(scores, span.start, span.len);
    Var costs = softplus(scale(pairwise_diff_col(s_q), -1.0));
    total = add(total, weighted_sum(costs, std::move(w)));
  }
  if (n_contributing == 0) {
    // No pair constraints: loss 0 with a zero gradient into the scores.
    return scale(sum_all(scores), 0.0);
  }
  return scale(total, 1.0 / n_contributing);
}

std::vector<std::vector<double>> score_dataset(ModelBundle& bundle,
                                               const Dataset& ds) {
  std::vector<double> flat = score_batch(bundle, features_matrix(ds));
  std::vector<std::vector<double>> out;
  out.reserve(ds.groups.size());
  size_t pos = 0;
  for (const QueryGroup& g : ds.groups) {
    out.emplace_back(flat.begin() + pos, flat.begin() + pos + g.items.size());
    pos += g.items.size();
  }
  return out;
}

namespace {

struct Phase {
  std::string name;
  int epochs = 0;
  bool train_encoder = false;
};

double validation_ndcg(ModelBundle& bundle, const Dataset& val, int k) {
  return ndcg_summary(val, score_dataset(bundle, val), k).mean;
}

}  // namespace

FinetuneResult finetune_run(const ModelBundle& encoder_bundle, bool pretrained,
                            const Dataset& train_labeled, const Dataset& val,
                            const FinetuneConfig& cfg, std::ostream* log) {
  cfg.validate();
  validate_dataset(train_labeled);
  validate_dataset(val);
  if (encoder_bundle.encoder.cfg.input_dim != train_labeled.feature_dim)
    fail(ErrorCode::ShapeMismatch,
         "encoder input_dim does not match dataset feature dim");

  ModelBundle work = encoder_bundle;
  work.projector.reset();
  work.predictor.reset();
  HeadKind hk = cfg.head;
  switch (cfg.strategy) {
    case FinetuneStrategy::linear_probe: hk = HeadKind::linear; break;
    case FinetuneStrategy::multilayer_probe: hk = HeadKind::mlp3; break;
    case FinetuneStrategy::full_finetune: hk = cfg.head; break;
  }
  const int w = work.encoder.embedding_dim();
  const int hidden = cfg.head_hidden > 0 ? cfg.head_hidden : w;
  work.head = make_head(HeadConfig{hk, w, hidden, 1},
                        derive_seed(cfg.seed, 0xEADu));

  std::vector<Phase> phases;
  if (cfg.strategy == FinetuneStrategy::full_finetune) {
    if (pretrained) {
      if (cfg.head_epochs > 0)
        phases.push_back({"head", cfg.head_epochs, false});
      if (cfg.full_epochs > 0) phases.push_back({"full", cfg.full_epochs, true});
    } else {
      phases.push_back({"full", cfg.head_epochs + cfg.full_epochs, true});
    }
  } else {
    phases.push_back({"probe", cfg.head_epochs + cfg.full_epochs, false});
  }

  Tensor train_features = features_matrix(train_labeled);
  if (work.standardizer)
    train_features = work.standardizer->apply(train_features);
  std::vector<int> train_labels = stacked_labels(train_labeled);
  std::vector<QgSpan> spans = group_spans(train_labeled);
  std::vector<std::vector<int>> batches =
      make_batches(train_labeled, cfg.batch_items);

  FinetuneResult result;
  result.best_val_ndcg = -1.0;

  int epoch_counter = 0;
  for (const Phase& phase : phases) {
    AdamState adam;
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;

    // Frozen encoder: item embeddings are constant for the whole phase.
    Tensor frozen_emb;
    if (!phase.train_encoder)
      frozen_emb = encoder_forward(work.encoder, train_features, Mode::eval);

    for (int e = 0; e < phase.epochs; ++e, ++epoch_counter) {
      double loss_sum = 0.0;
      for (size_t b = 0; b < batches.size(); ++b) {
        // Rebuild the batch view (rows and spans) for this QG subset.
        int total = 0;
        for (int q : batches[b]) total += spans[q].len;
        std::vector<QgSpan> bspans;
        std::vector<int> blabels;
        blabels.reserve(total);
        Tensor bx(total, phase.train_encoder ? train_features.cols()
                                             : frozen_emb.cols());
        int row = 0;
        const Tensor& src = phase.train_encoder ? train_features : frozen_emb;
        for (int q : batches[b]) {
          bspans.push_back({row, spans[q].len});
          for (int i = 0; i < spans[q].len; ++i, ++row) {
            std::copy(src.row_ptr(spans[q].start + i),
                      src.row_ptr(spans[q].start + i) + src.cols(),
                      bx.row_ptr(row));
            blabels.push_back(train_labels[spans[q].start + i]);
          }
        }

        Tape tape;
        Bound bound;
        Var x = leaf(tape, std::move(bx), false);
        Var emb = x;
        if (phase.train_encoder)
          emb = resnet_forward(tape, work.encoder, x, Mode::train,
                               derive_seed(cfg.seed, epoch_counter + 1, b + 1),
                               &bound);
        Var s = head_forward(tape, *work.head, emb, &bound);
        Var loss = lambdarank_loss(tape, s, blabels, bspans);
        tape.backward(loss.id);
        std::vector<Tensor*> params;
        std::vector<const Tensor*> grads;
        for (auto& [p, node] : bound.entries) {
          params.push_back(p);
          grads.push_back(&tape.grad(node));
        }
        adam_step(params, grads, adam, adam_cfg);
        loss_sum += loss.val().item();
      }
      double train_loss = loss_sum / static_cast<double>(batches.size());
      double val_ndcg = validation_ndcg(work, val, cfg.ndcg_k);
      result.history.push_back(
          {epoch_counter, phase.name, train_loss, val_ndcg});
      if (val_ndcg > result.best_val_ndcg) {
        result.best_val_ndcg = val_ndcg;
        result.best_epoch = epoch_counter;
        result.best = work;
      }
      if (log) {
        (*log) << nlohmann::json{{"epoch", epoch_counter},
                                 {"phase", phase.name},
                                 {"train_loss", train_loss},
                                 {"val_ndcg", val_ndcg}}
                      .dump()
               << "\n";
      }
    }
  }

  result.best.metadata["finetune_strategy"] = finetune_strategy_name(cfg.strategy);
  result.best.metadata["best_epoch"] = result.best_epoch;
  result.best.metadata["best_val_ndcg"] = result.best_val_ndcg;
  result.best.metadata["seed"] = cfg.seed;
  return result;
}

// --- combiner -------------------------------------------------------------------

namespace {

Tensor concat_embeddings(ModelBundle& a, ModelBundle& b, const Tensor& x) {
  Tensor xa = a.standardizer ? a.standardizer->apply(x) : x;
  Tensor xb = b.standardizer ? b.standardizer->apply(x) : x;
  Tensor ea = encoder_forward(a.encoder, xa, Mode::eval);
  Tensor eb = encoder_forward(b.encoder, xb, Mode::eval);
  Tensor out(ea.rows(), ea.cols() + eb.cols());
  for (int i = 0; i < ea.rows(); ++i) {
    std::copy(ea.row_ptr(i), ea.row_ptr(i) + ea.cols(), out.row_ptr(i));
    std::copy(eb.row_ptr(i), eb.row_ptr(i) + eb.cols(),
              out.row_ptr(i) + ea.cols());
  }
  return out;
}

std::vector<std::vector<double>> split_by_groups(const std::vector<double>& flat,
                                                 const Dataset& ds) {
  std::vector<std::vector<double>> out;
  out.reserve(ds.groups.size());
  size_t pos = 0;
  for (const QueryGroup& g : ds.groups) {
    out.emplace_back(flat.begin() + pos, flat.begin() + pos + g.items.size());
    pos += g.items.size();
  }
  return out;
}

std::vector<double> combined_score_rows(CombinedModel& m, const Tensor& x) {
  Tensor emb = concat_embeddings(m.enc_a, m.enc_b, x);
  Tape t;
  Var e = leaf(t, emb, false);
  Var gamma = leaf(t, m.bn.gamma, false);
  Var beta = leaf(t, m.bn.beta, false);
  Var h = batchnorm_eval(e, gamma, beta, m.bn.running_mean, m.bn.running_var,
                         m.bn.eps);
  Var w = leaf(t, m.scorer.W, false);
  Var b = leaf(t, m.scorer.b, false);
  return add_rowvec(matmul(h, w), b).val().data();
}

}  // namespace

std::vector<std::vector<double>> score_dataset_combined(CombinedModel& m,
                                                        const Dataset& ds) {
  return split_by_groups(combined_score_rows(m, features_matrix(ds)), ds);
}

CombineResult combine_encoders(const ModelBundle& a, const ModelBundle& b,
                               const Dataset& train_labeled, const Dataset& val,
                               const CombineConfig& cfg, std::ostream* log) {
  validate_dataset(train_labeled);
  validate_dataset(val);
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    fail(ErrorCode::InvalidConfig, "combine dropout must be in [0, 1)");
  CombineResult result;
  CombinedModel& m = result.model;
  m.enc_a = a;
  m.enc_b = b;
  m.enc_a.head.reset();
  m.enc_b.head.reset();
  const int dim = a.encoder.embedding_dim() + b.encoder.embedding_dim();
  m.bn = make_batchnorm(dim);
  m.dropout_p = cfg.dropout;
  Rng rng(derive_seed(cfg.seed, 0xC0413ull));
  m.scorer = make_linear(dim, 1, rng);

  Tensor train_emb =
      concat_embeddings(m.enc_a, m.enc_b, features_matrix(train_labeled));
  std::vector<int> train_labels = stacked_labels(train_labeled);
  std::vector<QgSpan> spans = group_spans(train_labeled);
  std::vector<std::vector<int>> batches =
      make_batches(train_labeled, cfg.batch_items);

  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  result.best_val_ndcg = -1.0;
  CombinedModel best = m;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      int total = 0;
      for (int q : batches[bi]) total += spans[q].len;
      Tensor bx(total, dim);
      std::vector<QgSpan> bspans;
      std::vector<int> blabels;
      int row = 0;
      for (int q : batches[bi]) {
        bspans.push_back({row, spans[q].len});
        for (int i = 0; i < spans[q].len; ++i, ++row) {
          std::copy(train_emb.row_ptr(spans[q].start + i),
                    train_emb.row_ptr(spans[q].start + i) + dim,
                    bx.row_ptr(row));
          blabels.push_back(train_labels[spans[q].start + i]);
        }
      }
      Tape tape;
      Var x = leaf(tape, std::move(bx), false);
      // Batchnorm affine stays frozen: only the linear scorer trains.
      Var h = bn_forward(tape, m.bn, x, Mode::train, nullptr);
      if (m.dropout_p > 0.0)
        h = dropout(h, m.dropout_p, derive_seed(cfg.seed, epoch + 1, bi + 1));
      Bound bound;
      Var w = bind_param(tape, m.scorer.W, &bound);
      Var bias = bind_param(tape, m.scorer.b, &bound);
      Var s = add_rowvec(matmul(h, w), bias);
      Var loss = lambdarank_loss(tape, s, blabels, bspans);
      tape.backward(loss.id);
      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (auto& [p, node] : bound.entries) {
        params.push_back(p);
        grads.push_back(&tape.grad(node));
      }
      adam_step(params, grads, adam, adam_cfg);
      loss_sum += loss.val().item();
    }
    double train_loss = loss_sum / static_cast<double>(batches.size());
    double val_ndcg =
        ndcg_summary(val, score_dataset_combined(m, val), cfg.ndcg_k).mean;
    result.history.push_back({epoch, "combine", train_loss, val_ndcg});
    if (val_ndcg > result.best_val_ndcg) {
      result.best_val_ndcg = val_ndcg;
      result.best_epoch = epoch;
      best = m;
    }
    if (log) {
      (*log) << nlohmann::json{{"epoch", epoch},
                               {"phase", "combine"},
                               {"train_loss", train_loss},
                               {"val_ndcg", val_ndcg}}
                    .dump()
             << "\n";
    }
  }
  result.model = best;
  return result;
}

Checkpoint combined_to_checkpoint(const CombinedModel& m) {
  Checkpoint a = bundle_to_checkpoint(m.enc_a);
  Checkpoint b = bundle_to_checkpoint(m.enc_b);
  Checkpoint ck;
  ck.configs["type"] = "combined_model";
  ck.configs["enc_a"] = a.configs;
  ck.configs["enc_b"] = b.configs;
  ck.configs["dropout"] = m.dropout_p;
  for (auto& [name, t] : a.tensors) ck.tensors.emplace_back("enc_a." + name, t);
  for (auto& [name, t] : b.tensors) ck.tensors.emplace_back("enc_b." + name, t);
  ck.tensors.emplace_back("combiner.bn.gamma", m.bn.gamma);
  ck.tensors.emplace_back("combiner.bn.beta", m.bn.beta);
  ck.tensors.emplace_back("combiner.bn.running_mean", m.bn.running_mean);
  ck.tensors.emplace_back("combiner.bn.running_var", m.bn.running_var);
  ck.tensors.emplace_back("combiner.scorer.W", m.scorer.W);
  ck.tensors.emplace_back("combiner.scorer.b", m.scorer.b);
  return ck;
}

CombinedModel combined_from_checkpoint(const Checkpoint& ck) {
  if (!ck.configs.contains("type") ||
      ck.configs.at("type") != "combined_model")
    fail(ErrorCode::CorruptCheckpoint, "not a combined-model checkpoint");
  auto sub_bundle = [&ck](const std::string& prefix,
                          const nlohmann::json& configs) {
    Checkpoint sub;
    sub.configs = configs;
    sub.metadata = nlohmann::json::object();
    for (const auto& [name, t] : ck.tensors)
      if (name.rfind(prefix, 0) == 0)
        sub.tensors.emplace_back(name.substr(prefix.size()), t);
    return bundle_from_checkpoint(sub);
  };
  CombinedModel m;
  m.enc_a = sub_bundle("enc_a.", ck.configs.at("enc_a"));
  m.enc_b = sub_bundle("enc_b.", ck.configs.at("enc_b"));
  m.dropout_p = ck.configs.at("dropout").get<double>();
  const int dim =
      m.enc_a.encoder.embedding_dim() + m.enc_b.encoder.embedding_dim();
  m.bn = make_batchnorm(dim);
  auto grab = [&ck](const char* name, Tensor& dst) {
    const Tensor* t = ck.find(name);
    if (!t) fail(ErrorCode::CorruptCheckpoint,
                 std::string("checkpoint missing tensor ") + name);
    if (!t->same_shape(dst))
      fail(ErrorCode::ShapeMismatch, std::string("bad shape for ") + name);
    dst = *t;
  };
  grab("combiner.bn.gamma", m.bn.gamma);
  grab("combiner.bn.beta", m.bn.beta);
  grab("combiner.bn.running_mean", m.bn.running_mean);
  grab("combiner.bn.running_var", m.bn.running_var);
  m.scorer.W = Tensor(dim, 1);
  m.scorer.b = Tensor(1, 1);
  grab("combiner.scorer.W", m.scorer.W);
  grab("combiner.scorer.b", m.scorer.b);
  return m;
}

}  // namespace ltr
