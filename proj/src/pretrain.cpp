#include "ltr/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace ltr {

std::string pretrain_method_name(PretrainMethod m) {
  switch (m) {
    case PretrainMethod::simclr: return "simclr";
    case PretrainMethod::simclr_rank: return "simclr_rank";
    case PretrainMethod::simclr_sample: return "simclr_sample";
    case PretrainMethod::simsiam: return "simsiam";
  }
  return "simclr_rank";
}

PretrainMethod pretrain_method_from_name(const std::string& s) {
  if (s == "simclr") return PretrainMethod::simclr;
  if (s == "simclr_rank") return PretrainMethod::simclr_rank;
  if (s == "simclr_sample") return PretrainMethod::simclr_sample;
  if (s == "simsiam") return PretrainMethod::simsiam;
  fail(ErrorCode::InvalidConfig, "unknown pretrain method: " + s);
}

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) fail(ErrorCode::InvalidConfig, "tau must be > 0");
  if (epochs < 1) fail(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (batch_items < 1)
    fail(ErrorCode::InvalidConfig, "batch_items must be >= 1");
  if (!(lr > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be > 0");
  aug.validate();
}

namespace {

// Sum over the 2L anchors of one block of
//   -cos(z_i^a, z_i^abar)/tau + log sum_{(j,a') != (i,a)} exp(cos/tau).
// z0blk/z1blk are the block's two views (L x h each).
Var block_infonce(Var z0blk, Var z1blk, double tau) {
  const int L = z0blk.val().rows();
  Var z = concat_rows(z0blk, z1blk);  // 2L x h
  Var zn = l2_normalize_rows(z);
  // cos/tau in one product: scaling one normalized side avoids a second
  // 2L x 2L intermediate.
  Var sims = matmul_nt(scale(zn, 1.0 / tau), zn);
  const int n = 2 * L;
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 1);
  for (int i = 0; i < n; ++i) mask[static_cast<size_t>(i) * n + i] = 0;
  Var lse = masked_logsumexp_rows(sims, mask);
  std::vector<std::pair<int, int>> partners;
  partners.reserve(n);
  for (int i = 0; i < L; ++i) partners.emplace_back(i, i + L);
  for (int i = 0; i < L; ++i) partners.emplace_back(i + L, i);
  Var pos = gather_pairs(sims, partners);
  return sum_all(sub(lse, pos));
}

void check_views(const Tape& t, Var z0, Var z1) {
  if (z0.tape != &t || z1.tape != &t)
    fail(ErrorCode::InvalidConfig, "view embeddings built on a different tape");
  if (!z0.val().same_shape(z1.val()))
    fail(ErrorCode::ShapeMismatch, "view embeddings must have equal shapes");
  if (z0.val().rows() < 1)
    fail(ErrorCode::InvalidDataset, "empty batch");
}

}  // namespace

Var simclr_loss(Tape& t, Var z0, Var z1, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::InvalidConfig, "tau must be > 0");
  check_views(t, z0, z1);
  const int n = z0.val().rows();
  return scale(block_infonce(z0, z1, tau), 1.0 / n);
}

Var simclr_rank_loss(Tape& t, Var z0, Var z1, const std::vector<QgSpan>& spans,
                     double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::InvalidConfig, "tau must be > 0");
  check_views(t, z0, z1);
  const int n = z0.val().rows();
  int covered = 0;
  Var total = leaf(t, Tensor::scalar(0.0), false);
  for (const QgSpan& s : spans) {
    if (s.start < 0 || s.len < 1 || s.start + s.len > n)
      fail(ErrorCode::ShapeMismatch, "QG spans must partition the batch");
    if (s.start != covered)
      fail(ErrorCode::ShapeMismatch, "QG spans must partition the batch");
    covered += s.len;
    Var b0 = slice_rows(z0, s.start, s.len);
    Var b1 = slice_rows(z1, s.start, s.len);
    total = add(total, block_infonce(b0, b1, tau));
  }
  if (covered != n)
    fail(ErrorCode::ShapeMismatch, "QG spans must partition the batch");
  return scale(total, 1.0 / n);
}

Var simclr_sample_loss(Tape& t, Var z0, Var z1, int fake_group_size,
                       Rng& epoch_rng, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::InvalidConfig, "tau must be > 0");
  check_views(t, z0, z1);
  if (fake_group_size < 1)
    fail(ErrorCode::InvalidConfig, "fake_group_size must be >= 1");
  const int n = z0.val().rows();
  std::vector<int> perm = epoch_rng.permutation(n);
  Var total = leaf(t, Tensor::scalar(0.0), false);
  for (int start = 0; start < n; start += fake_group_size) {
    int len = std::min(fake_group_size, n - start);
    std::vector<int> idx(perm.begin() + start, perm.begin() + start + len);
    Var b0 = gather_rows(z0, idx);
    Var b1 = gather_rows(z1, idx);
    total = add(total, block_infonce(b0, b1, tau));
  }
  return scale(total, 1.0 / n);
}

Var simsiam_loss(Tape& t, Var p0, Var p1, Var z0, Var z1) {
  check_views(t, p0, p1);
  check_views(t, z0, z1);
  if (p0.val().cols() != z0.val().cols() ||
      p0.val().rows() != z0.val().rows())
    fail(ErrorCode::ShapeMismatch, "predictor/projection dims must match");
  Var c0 = cosine_rows(p0, stop_gradient(z1));
  Var c1 = cosine_rows(p1, stop_gradient(z0));
  return scale(mean_all(add(c0, c1)), -0.5);
}

namespace {

struct BatchData {
  Tensor features;            // items x d
  std::vector<QgSpan> spans;  // within the batch
};

BatchData gather_batch(const Tensor& all_features,
                       const std::vector<QgSpan>& all_spans,
                       const std::vector<int>& qg_indices) {
  int total = 0;
  for (int q : qg_indices) total += all_spans[q].len;
  BatchData b;
  b.features = Tensor(total, all_features.cols());
  int row = 0;
  for (int q : qg_indices) {
    const QgSpan& s = all_spans[q];
    b.spans.push_back({row, s.len});
    for (int i = 0; i < s.len; ++i, ++row)
      std::copy(all_features.row_ptr(s.start + i),
                all_features.row_ptr(s.start + i) + all_features.cols(),
                b.features.row_ptr(row));
  }
  return b;
}

double mean_qg_size(const Dataset& ds) {
  return static_cast<double>(ds.n_items()) / ds.groups.size();
}

// One forward+loss evaluation. When bound != nullptr the parameters are
// trainable and the caller runs backward.
Var pretrain_loss_on_batch(Tape& t, ModelBundle& bundle,
                           const PretrainConfig& cfg, const BatchData& batch,
                           uint64_t stream_seed, Mode mode, Bound* bound) {
  Rng aug_rng(derive_seed(stream_seed, 0xA06));
  auto [x0, x1] = make_positive_pair(batch.features, cfg.aug, aug_rng);
  const int n = x0.rows();
  // Both views share one encoder pass so batchnorm sees the full pair batch.
  Tensor x01(2 * n, x0.cols());
  std::copy(x0.data().begin(), x0.data().end(), x01.data().begin());
  std::copy(x1.data().begin(), x1.data().end(), x01.data().begin() + x0.size());
  Var x = leaf(t, std::move(x01), false);
  Var h = resnet_forward(t, bundle.encoder, x, mode,
                         derive_seed(stream_seed, 0xD50), bound);
  Var z = head_forward(t, *bundle.projector, h, bound);
  Var z0 = slice_rows(z, 0, n);
  Var z1 = slice_rows(z, n, n);
  switch (cfg.method) {
    case PretrainMethod::simclr:
      return simclr_loss(t, z0, z1, cfg.tau);
    case PretrainMethod::simclr_rank:
      return simclr_rank_loss(t, z0, z1, batch.spans, cfg.tau);
    case PretrainMethod::simclr_sample: {
      int fgs = cfg.fake_group_size;
      Rng perm_rng(derive_seed(stream_seed, 0xFA4E));
      return simclr_sample_loss(t, z0, z1, fgs, perm_rng, cfg.tau);
    }
    case PretrainMethod::simsiam: {
      Var p = head_forward(t, *bundle.predictor, z, bound);
      Var p0 = slice_rows(p, 0, n);
      Var p1 = slice_rows(p, n, n);
      return simsiam_loss(t, p0, p1, z0, z1);
    }
  }
  fail(ErrorCode::InvalidConfig, "unknown pretrain method");
}

}  // namespace

PretrainResult pretrain_run(const Dataset& train, const Dataset* val,
                            const TabularResNetConfig& encoder_cfg,
                            const PretrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  validate_dataset(train);
  if (encoder_cfg.input_dim != train.feature_dim)
    fail(ErrorCode::ShapeMismatch,
         "encoder input_dim does not match dataset feature dim");

  PretrainConfig run_cfg = cfg;
  if (run_cfg.fake_group_size == 0)
    run_cfg.fake_group_size = std::max(
        1, static_cast<int>(std::lround(mean_qg_size(train))));

  PretrainResult result;
  ModelBundle& bundle = result.bundle;
  bundle.encoder = make_resnet(encoder_cfg, derive_seed(cfg.seed, 1));
  const int w = encoder_cfg.width;
  const int hidden = cfg.head_hidden > 0 ? cfg.head_hidden : w;
  bundle.projector = make_head(
      HeadConfig{HeadKind::projector, w, hidden, w}, derive_seed(cfg.seed, 2));
  if (cfg.method == PretrainMethod::simsiam)
    bundle.predictor = make_head(HeadConfig{HeadKind::predictor, w, hidden, w},
                                 derive_seed(cfg.seed, 3));

  Tensor all_features = features_matrix(train);
  if (cfg.standardize) {
    bundle.standardizer = Standardizer::fit(all_features);
    all_features = bundle.standardizer->apply(all_features);
  }
  std::vector<QgSpan> all_spans = group_spans(train);
  std::vector<std::vector<int>> batches = make_batches(train, cfg.batch_items);

  Tensor val_features;
  std::vector<QgSpan> val_spans;
  if (val) {
    validate_dataset(*val);
    val_features = features_matrix(*val);
    if (bundle.standardizer)
      val_features = bundle.standardizer->apply(val_features);
    val_spans = group_spans(*val);
  }

  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  const size_t n_items = train.n_items();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      BatchData batch = gather_batch(all_features, all_spans, batches[b]);
      Tape tape;
      Bound bound;
      uint64_t stream = derive_seed(cfg.seed, epoch + 1, b + 1);
      Var loss = pretrain_loss_on_batch(tape, bundle, run_cfg, batch, stream,
                                        Mode::train, &bound);
      tape.backward(loss.id);
      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      params.reserve(bound.entries.size());
      for (auto& [p, node] : bound.entries) {
        params.push_back(p);
        grads.push_back(&tape.grad(node));
      }
      adam_step(params, grads, adam, adam_cfg);
      loss_sum += loss.val().item() * batch.features.rows();
    }
    double epoch_loss = loss_sum / static_cast<double>(n_items);
    result.epoch_losses.push_back(epoch_loss);

    double val_loss = 0.0;
    if (val) {
      BatchData vb{val_features, val_spans};
      Tape tape;
      uint64_t stream = derive_seed(cfg.seed, epoch + 1, 0xE7A1);
      Var loss = pretrain_loss_on_batch(tape, bundle, run_cfg, vb, stream,
                                        Mode::eval, nullptr);
      val_loss = loss.val().item();
      result.val_losses.push_back(val_loss);
    }

    if (log) {
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
      nlohmann::json line{{"epoch", epoch}, {"loss", epoch_loss},
                          {"wall_ms", ms}};
      if (val) line["val_loss"] = val_loss;
      (*log) << line.dump() << "\n";
    }
  }

  bundle.metadata["pretrain_method"] = pretrain_method_name(cfg.method);
  bundle.metadata["pretrain_epochs"] = cfg.epochs;
  bundle.metadata["seed"] = cfg.seed;
  bundle.metadata["loss_history"] = result.epoch_losses;
  if (val) bundle.metadata["val_loss_history"] = result.val_losses;
  return result;
}

}  // namespace ltr
