#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ltr/finetune.hpp"
#include "ltr/rng.hpp"

using namespace ltr;

namespace {

// Linearly separable ranking problem: relevant items sit at feature-0 values
// well above the irrelevant ones, so scoring by feature 0 ranks perfectly.
Dataset linear_toy(int n_groups, int items, int d, uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.feature_dim = d;
  for (int q = 0; q < n_groups; ++q) {
    QueryGroup g;
    g.qid = std::to_string(q + 1);
    for (int i = 0; i < items; ++i) {
      Item it;
      it.features.resize(d);
      bool relevant = i < items / 2;
      it.features[0] = relevant ? 1.0 + rng.uniform() : -1.0 - rng.uniform();
      for (int j = 1; j < d; ++j) it.features[j] = 0.3 * rng.normal();
      it.relevance = relevant ? 1 : 0;
      g.items.push_back(std::move(it));
    }
    rng.shuffle(g.items);
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

ModelBundle small_encoder(int d, int width, uint64_t seed) {
  TabularResNetConfig cfg;
  cfg.input_dim = d;
  cfg.width = width;
  cfg.n_blocks = 2;
  ModelBundle b;
  b.encoder = make_resnet(cfg, seed);
  return b;
}

}  // namespace

TEST_CASE("lambdarank: all-equal labels give zero loss and zero gradient") {
  Tape t;
  Var s = leaf(t, Tensor::col({1.0, -0.5, 2.0}), true);
  Var loss = lambdarank_loss(t, s, {2, 2, 2}, {{0, 3}});
  CHECK(loss.val().item() == 0.0);
  t.backward(loss.id);
  for (double g : t.grad(s.id).data()) CHECK(g == 0.0);
}

TEST_CASE("lambdarank: misordered pair is pushed in the right direction") {
  // y = [1, 0] but s1 <= s2: gradient must push s1 up (negative gradient)
  // and s2 down (positive gradient) since we minimize.
  Tape t;
  Var s = leaf(t, Tensor::col({-0.2, 0.7}), true);
  Var loss = lambdarank_loss(t, s, {1, 0}, {{0, 2}});
  CHECK(loss.val().item() > 0.0);
  t.backward(loss.id);
  CHECK(t.grad(s.id).at(0, 0) < 0.0);
  CHECK(t.grad(s.id).at(1, 0) > 0.0);
}

TEST_CASE("lambda symmetry and zero-sum per-QG gradient") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.below(5));
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(rng.below(4));
    labels[0] = 3;
    labels[n - 1] = 0;
    Tensor sv(n, 1);
    for (double& v : sv.data()) v = rng.normal();
    Tape t;
    Var s = leaf(t, sv, true);
    Var loss = lambdarank_loss(t, s, labels, {{0, n}});
    t.backward(loss.id);
    double sum = 0.0;
    for (double g : t.grad(s.id).data()) sum += g;
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("pair weights match the exhaustive swap oracle on 3-item QGs") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int> labels = {static_cast<int>(rng.below(4)),
                               static_cast<int>(rng.below(4)),
                               static_cast<int>(rng.below(4))};
    std::vector<double> scores = {rng.normal(), rng.normal(), rng.normal()};
    bool distinct = labels[0] != labels[1] || labels[1] != labels[2];
    if (!distinct) labels[0] = labels[1] + 1;
    Tensor w = lambdarank_pair_weights(scores, labels);
    // Oracle: physically swap the two items' ranks and rescore the full-list
    // NDCG; |before - after| must equal the weight.
    std::vector<int> pi = ranking_from_scores(scores);
    double ideal = dcg(ideal_ranking(labels), labels);
    double before = dcg(pi, labels) / ideal;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (labels[i] <= labels[j]) {
          CHECK(w.at(i, j) == 0.0);
          continue;
        }
        std::vector<int> swapped = pi;
        std::swap(swapped[i], swapped[j]);
        double after = dcg(swapped, labels) / ideal;
        CHECK(w.at(i, j) ==
              doctest::Approx(std::abs(before - after)).epsilon(1e-10));
      }
  }
}

TEST_CASE("lambdarank + small model gradient check") {
  Rng rng(7);
  ModelBundle b = small_encoder(5, 8, 11);
  Mlp head = make_head(HeadConfig{HeadKind::mlp3, 8, 6, 1}, 12);
  Tensor x(6, 5);
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels = {2, 0, 1, 3, 0, 1};
  std::vector<QgSpan> spans{{0, 3}, {3, 3}};
  double err = grad_check(
      [&](Tape& t, const std::vector<Var>& l) {
        TabularResNet enc = b.encoder;
        Mlp h = head;
        Var e = resnet_forward(t, enc, l[0], Mode::train, 0, nullptr);
        Var s = head_forward(t, h, e, nullptr);
        return lambdarank_loss(t, s, labels, spans);
      },
      {x});
  CHECK(err < 1e-4);
}

TEST_CASE("linear probe keeps the encoder bit-identical") {
  Dataset train = linear_toy(12, 6, 4, 1);
  Dataset val = linear_toy(6, 6, 4, 2);
  ModelBundle enc = small_encoder(4, 6, 3);
  ModelBundle before = enc;
  FinetuneConfig cfg;
  cfg.strategy = FinetuneStrategy::linear_probe;
  cfg.head_epochs = 3;
  cfg.full_epochs = 0;
  cfg.lr = 1e-3;
  cfg.seed = 4;
  FinetuneResult r = finetune_run(enc, true, train, val, cfg, nullptr);
  auto pa = collect_params(before);
  ModelBundle after = r.best;
  after.head.reset();
  auto pb = collect_params(after);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].second->data() == pb[i].second->data());
  CHECK(r.best.head->layers.size() == 1);  // LP pins a linear head
}

TEST_CASE("multilayer probe uses an mlp3 head and keeps the encoder frozen") {
  Dataset train = linear_toy(8, 5, 3, 5);
  Dataset val = linear_toy(4, 5, 3, 6);
  ModelBundle enc = small_encoder(3, 5, 7);
  ModelBundle before = enc;
  FinetuneConfig cfg;
  cfg.strategy = FinetuneStrategy::multilayer_probe;
  cfg.head_epochs = 2;
  cfg.full_epochs = 0;
  cfg.seed = 8;
  FinetuneResult r = finetune_run(enc, true, train, val, cfg, nullptr);
  CHECK(r.best.head->layers.size() == 3);
  ModelBundle after = r.best;
  after.head.reset();
  auto pa = collect_params(before);
  auto pb = collect_params(after);
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].second->data() == pb[i].second->data());
}

TEST_CASE("full finetune reaches train NDCG 1.0 on a linearly separable toy") {
  Dataset train = linear_toy(40, 6, 4, 21);
  ModelBundle enc = small_encoder(4, 8, 23);
  FinetuneConfig cfg;
  cfg.strategy = FinetuneStrategy::full_finetune;
  cfg.head = HeadKind::mlp3;
  cfg.head_epochs = 40;
  cfg.full_epochs = 160;
  cfg.lr = 3e-3;
  cfg.batch_items = 120;
  cfg.seed = 24;
  // Validating on train makes the retained checkpoint the train-NDCG max.
  FinetuneResult r = finetune_run(enc, false, train, train, cfg, nullptr);
  double train_ndcg =
      ndcg_summary(train, score_dataset(r.best, train), 5).mean;
  CHECK(train_ndcg == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.best_epoch < 200);
}

TEST_CASE("early stopping returns the max-validation checkpoint") {
  Dataset train = linear_toy(10, 5, 3, 31);
  Dataset val = linear_toy(5, 5, 3, 32);
  ModelBundle enc = small_encoder(3, 5, 33);
  FinetuneConfig cfg;
  cfg.strategy = FinetuneStrategy::full_finetune;
  cfg.head_epochs = 4;
  cfg.full_epochs = 6;
  cfg.lr = 1e-3;
  cfg.seed = 34;
  FinetuneResult r = finetune_run(enc, true, train, val, cfg, nullptr);
  REQUIRE(r.history.size() == 10);
  double max_val = -1.0;
  int argmax = -1;
  for (const EpochRecord& e : r.history)
    if (e.val_ndcg > max_val) {
      max_val = e.val_ndcg;
      argmax = e.epoch;
    }
  CHECK(r.best_val_ndcg == max_val);
  CHECK(r.best_epoch == argmax);  // ties break to the earliest epoch
  double replay = ndcg_summary(val, score_dataset(r.best, val), 5).mean;
  CHECK(replay == doctest::Approx(max_val).epsilon(1e-12));
}

TEST_CASE("FF train loss does not end above its starting value") {
  Dataset train = linear_toy(15, 6, 4, 41);
  Dataset val = linear_toy(5, 6, 4, 42);
  ModelBundle enc = small_encoder(4, 6, 43);
  FinetuneConfig cfg;
  cfg.head_epochs = 10;
  cfg.full_epochs = 30;
  cfg.lr = 1e-3;
  cfg.seed = 44;
  FinetuneResult r = finetune_run(enc, false, train, val, cfg, nullptr);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("combiner") {
  Dataset train = linear_toy(20, 6, 4, 51);
  Dataset val = linear_toy(8, 6, 4, 52);
  FinetuneConfig fcfg;
  fcfg.head_epochs = 10;
  fcfg.full_epochs = 20;
  fcfg.lr = 2e-3;
  fcfg.seed = 53;
  ModelBundle base = small_encoder(4, 6, 54);
  FinetuneResult fa = finetune_run(base, false, train, val, fcfg, nullptr);
  ModelBundle ft_a = fa.best;
  ModelBundle ft_b = fa.best;  // identical encoders

  CombineConfig ccfg;
  ccfg.dropout = 0.0;
  ccfg.epochs = 120;
  ccfg.lr = 5e-3;
  ccfg.seed = 55;
  CombineResult cr = combine_encoders(ft_a, ft_b, train, val, ccfg, nullptr);

  SUBCASE("combined embedding dim is h_a + h_b") {
    CHECK(cr.model.scorer.W.rows() == 12);
    CHECK(cr.model.bn.gamma.cols() == 12);
  }
  SUBCASE("encoder parameters never move") {
    auto pa = collect_params(ft_a);
    auto pb = collect_params(cr.model.enc_a);
    // ft_a still owns a head; the combiner dropped it.
    size_t j = 0;
    for (size_t i = 0; i < pa.size(); ++i) {
      if (pa[i].first.rfind("head", 0) == 0) continue;
      CHECK(pa[i].second->data() == pb[j].second->data());
      ++j;
    }
  }
  SUBCASE("combined validation NDCG at least matches the weaker input") {
    double val_a = ndcg_summary(val, score_dataset(ft_a, val), 5).mean;
    double val_b = ndcg_summary(val, score_dataset(ft_b, val), 5).mean;
    CHECK(cr.best_val_ndcg >= std::min(val_a, val_b) - 1e-9);
  }
  SUBCASE("combined checkpoint round-trips") {
    Checkpoint ck = combined_to_checkpoint(cr.model);
    save_checkpoint(ck, "/tmp/ltrkit_combined.ckpt");
    Checkpoint back = load_checkpoint("/tmp/ltrkit_combined.ckpt");
    CombinedModel m2 = combined_from_checkpoint(back);
    CHECK(m2.scorer.W.data() == cr.model.scorer.W.data());
    CHECK(m2.bn.running_mean.data() == cr.model.bn.running_mean.data());
    // identical scores on validation
    auto s1 = score_dataset_combined(cr.model, val);
    auto s2 = score_dataset_combined(m2, val);
    CHECK(s1 == s2);
    std::remove("/tmp/ltrkit_combined.ckpt");
  }
}
