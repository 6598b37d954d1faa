// Experiment runner: pretraining, finetuning, evaluation, label-scarcity
// simulators, semi-supervised transforms, and the sweep/bench harnesses.
// Every command resolves its options (config file + flags), writes its
// outputs under --out, and drops a manifest.json describing the run.
#include <CLI11.hpp>

#include <atomic>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ltr/bench.hpp"
#include "ltr/dataset.hpp"
#include "ltr/eval.hpp"
#include "ltr/finetune.hpp"
#include "ltr/pretrain.hpp"
#include "ltr/semi.hpp"
#include "ltr/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ltr;

namespace {

constexpr const char* kVersion = "ltrkit 0.1.0";

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  long long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::UnknownQid: return "UnknownQid";
    case ErrorCode::IoError: return "IoError";
  }
  return "Error";
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const json& config, const std::vector<std::string>& artifacts,
                    long long wall_ms, const std::vector<uint64_t>& seeds = {}) {
  json m{{"command", command},
         {"version", kVersion},
         {"config", config},
         {"artifacts", artifacts},
         {"wall_ms", wall_ms}};
  if (!seeds.empty()) m["trial_seeds"] = seeds;
  for (const std::string& a : artifacts)
    if (!fs::exists(dir / a))
      fail(ErrorCode::IoError, "missing output artifact: " + a);
  write_json(dir / "manifest.json", m);
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail(ErrorCode::IoError, "float format failure");
  return std::string(buf, ptr);
}

// --- shared option blocks ------------------------------------------------------

struct EncoderOpts {
  int width = 136;
  int blocks = 3;
  double dropout_hidden = 0.0;
  double dropout_residual = 0.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--width", width, "encoder width / embedding dim");
    cmd->add_option("--blocks", blocks, "number of residual blocks");
    cmd->add_option("--dropout-hidden", dropout_hidden,
                    "in-block dropout after relu");
    cmd->add_option("--dropout-residual", dropout_residual,
                    "in-block dropout before the residual add");
  }
  TabularResNetConfig config(int input_dim) const {
    TabularResNetConfig c;
    c.input_dim = input_dim;
    c.width = width;
    c.n_blocks = blocks;
    c.dropout_hidden = dropout_hidden;
    c.dropout_residual = dropout_residual;
    return c;
  }
  json to_json() const {
    return {{"width", width},
            {"blocks", blocks},
            {"dropout_hidden", dropout_hidden},
            {"dropout_residual", dropout_residual}};
  }
};

struct PretrainOpts {
  std::string method = "simclr_rank";
  std::string aug = "zeroing:0.1";
  double tau = 0.1;
  int batch_items = 200000;
  int epochs = 300;
  double lr = 5e-4;
  int fake_group_size = 0;
  bool standardize = false;

  void attach(CLI::App* cmd, const std::string& prefix = "") {
    auto opt = [&](const char* name) { return "--" + prefix + name; };
    cmd->add_option(opt("method"), method,
                    "simclr|simclr_rank|simclr_sample|simsiam");
    cmd->add_option(opt("aug"), aug, "zeroing:<p> or gaussian:<scale>");
    cmd->add_option(opt("tau"), tau, "InfoNCE temperature");
    cmd->add_option(opt("batch-items"), batch_items, "items per batch");
    cmd->add_option(opt("epochs"), epochs, "pretraining epochs");
    cmd->add_option(opt("lr"), lr, "Adam learning rate");
    cmd->add_option(opt("fake-group-size"), fake_group_size,
                    "simclr_sample fake QG size (0 = mean QG size)");
    cmd->add_flag(opt("standardize"), standardize,
                  "fit per-feature standardization on the pretraining set");
  }
  PretrainConfig config(uint64_t seed) const {
    PretrainConfig c;
    c.method = pretrain_method_from_name(method);
    c.aug = AugmentSpec::parse(aug);
    c.tau = tau;
    c.batch_items = batch_items;
    c.epochs = epochs;
    c.lr = lr;
    c.fake_group_size = fake_group_size;
    c.standardize = standardize;
    c.seed = seed;
    return c;
  }
  json to_json() const {
    return {{"method", method},   {"aug", aug},
            {"tau", tau},         {"batch_items", batch_items},
            {"epochs", epochs},   {"lr", lr},
            {"fake_group_size", fake_group_size},
            {"standardize", standardize}};
  }
};

struct FinetuneOpts {
  std::string strategy = "ff";
  std::string head = "mlp3";
  int head_epochs = 100;
  int full_epochs = 100;
  double lr = 5e-5;
  int batch_items = 1000;
  int k = 5;

  void attach(CLI::App* cmd, const std::string& prefix = "") {
    auto opt = [&](const char* name) { return "--" + prefix + name; };
    cmd->add_option(opt("strategy"), strategy, "ff|lp|mp");
    cmd->add_option(opt("head"), head,
                    "mlp3|linear (binary labels force linear)");
    cmd->add_option(opt("head-epochs"), head_epochs, "head-only epochs (FF)");
    cmd->add_option(opt("full-epochs"), full_epochs, "full-model epochs (FF)");
    cmd->add_option(opt("lr"), lr, "Adam learning rate");
    cmd->add_option(opt("batch-items"), batch_items, "items per batch");
    cmd->add_option(opt("k"), k, "NDCG cutoff for validation");
  }
  FinetuneConfig config(uint64_t seed, LabelKind train_labels) const {
    FinetuneConfig c;
    c.strategy = finetune_strategy_from_name(strategy);
    c.head = head_kind_from_name(head);
    // Binary implicit-feedback runs score with a single linear layer.
    if (train_labels == LabelKind::binary) c.head = HeadKind::linear;
    c.head_epochs = head_epochs;
    c.full_epochs = full_epochs;
    c.lr = lr;
    c.batch_items = batch_items;
    c.ndcg_k = k;
    c.seed = seed;
    return c;
  }
  json to_json() const {
    return {{"strategy", strategy},       {"head", head},
            {"head_epochs", head_epochs}, {"full_epochs", full_epochs},
            {"lr", lr},                   {"batch_items", batch_items},
            {"k", k}};
  }
};

// --- csv helpers ----------------------------------------------------------------

struct ScoreFile {
  // item scores per qid, in the qid's item order
  std::map<std::string, std::vector<std::pair<int, double>>> by_qid;
};

ScoreFile read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  ScoreFile sf;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("qid,", 0) == 0) continue;  // header
    std::istringstream ss(line);
    std::string qid, idx_s, score_s;
    if (!std::getline(ss, qid, ',') || !std::getline(ss, idx_s, ',') ||
        !std::getline(ss, score_s))
      fail(ErrorCode::ParseError,
           path + " line " + std::to_string(line_no) + ": want qid,index,score");
    try {
      sf.by_qid[qid].emplace_back(std::stoi(idx_s), std::stod(score_s));
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError,
           path + " line " + std::to_string(line_no) + ": non-numeric field");
    }
  }
  return sf;
}

std::vector<std::vector<double>> align_scores(const ScoreFile& sf,
                                              const Dataset& test) {
  std::vector<std::vector<double>> out;
  for (const QueryGroup& g : test.groups) {
    auto it = sf.by_qid.find(g.qid);
    if (it == sf.by_qid.end())
      fail(ErrorCode::UnknownQid, "no scores for qid " + g.qid);
    if (it->second.size() != g.items.size())
      fail(ErrorCode::ShapeMismatch,
           "qid " + g.qid + ": score count != item count");
    std::vector<double> s(g.items.size());
    std::vector<bool> seen(g.items.size(), false);
    for (auto [idx, score] : it->second) {
      if (idx < 0 || idx >= static_cast<int>(s.size()) || seen[idx])
        fail(ErrorCode::ParseError,
             "qid " + g.qid + ": bad or duplicate item index");
      seen[idx] = true;
      s[idx] = score;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string scores_to_csv(const Dataset& ds,
                          const std::vector<std::vector<double>>& scores) {
  std::ostringstream out;
  out << "qid,item_index,score\n";
  for (size_t q = 0; q < ds.groups.size(); ++q)
    for (size_t i = 0; i < scores[q].size(); ++i)
      out << ds.groups[q].qid << ',' << i << ','
          << format_double(scores[q][i]) << '\n';
  return out.str();
}

std::set<std::string> read_qid_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  std::set<std::string> out;
  for (const auto& q : j.at("outlier_qids")) out.insert(q.get<std::string>());
  return out;
}

ModelBundle load_bundle(const std::string& path) {
  return bundle_from_checkpoint(load_checkpoint(path));
}

// --- sweep -----------------------------------------------------------------------

struct SweepRow {
  std::string method;
  double fraction = 0.0;
  int trial = 0;
  double ndcg = 0.0;
  double outlier = 0.0;  // NaN when no outlier set
  double val_ndcg = 0.0;
};

struct SweepPlan {
  std::vector<std::string> methods;
  std::vector<double> fractions;
  int trials = 3;
  uint64_t base_seed = 1;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabular learning-to-rank pretraining toolkit"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "INI config file ([subcommand] sections)");
  app.require_subcommand(1);

  // ---- pretrain ----
  auto* cmd_pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  std::string pre_train, pre_val, pre_out;
  uint64_t pre_seed = 1;
  EncoderOpts pre_enc;
  PretrainOpts pre_opts;
  cmd_pre->add_option("--train", pre_train, "training LETOR file")->required();
  cmd_pre->add_option("--val", pre_val, "validation LETOR file (SSL loss)");
  cmd_pre->add_option("--out", pre_out, "output directory")->required();
  cmd_pre->add_option("--seed", pre_seed, "run seed");
  pre_enc.attach(cmd_pre);
  pre_opts.attach(cmd_pre);

  // ---- finetune / train ----
  auto* cmd_ft = app.add_subcommand("finetune", "supervised finetuning of a checkpoint");
  std::string ft_ckpt, ft_train, ft_val, ft_out;
  uint64_t ft_seed = 1;
  FinetuneOpts ft_opts;
  cmd_ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required();
  cmd_ft->add_option("--train", ft_train, "labeled LETOR file")->required();
  cmd_ft->add_option("--val", ft_val, "validation LETOR file")->required();
  cmd_ft->add_option("--out", ft_out, "output directory")->required();
  cmd_ft->add_option("--seed", ft_seed, "run seed");
  ft_opts.attach(cmd_ft);

  auto* cmd_tr = app.add_subcommand("train", "supervised training from scratch");
  std::string tr_train, tr_val, tr_out;
  uint64_t tr_seed = 1;
  EncoderOpts tr_enc;
  FinetuneOpts tr_opts;
  cmd_tr->add_option("--train", tr_train, "labeled LETOR file")->required();
  cmd_tr->add_option("--val", tr_val, "validation LETOR file")->required();
  cmd_tr->add_option("--out", tr_out, "output directory")->required();
  cmd_tr->add_option("--seed", tr_seed, "run seed");
  tr_enc.attach(cmd_tr);
  tr_opts.attach(cmd_tr);

  // ---- score / eval ----
  auto* cmd_sc = app.add_subcommand("score", "score a dataset with a checkpoint");
  std::string sc_ckpt, sc_data, sc_out;
  bool sc_combined = false;
  cmd_sc->add_option("--checkpoint", sc_ckpt)->required();
  cmd_sc->add_option("--data", sc_data, "LETOR file")->required();
  cmd_sc->add_option("--out", sc_out, "output directory")->required();
  cmd_sc->add_flag("--combined", sc_combined, "checkpoint is a combined model");

  auto* cmd_ev = app.add_subcommand("eval", "NDCG / Outlier-NDCG of a score file");
  std::string ev_pred, ev_test, ev_out, ev_outliers;
  int ev_k = 5;
  bool ev_per_qg = false;
  cmd_ev->add_option("--pred", ev_pred, "scores CSV (qid,item_index,score)")->required();
  cmd_ev->add_option("--test", ev_test, "test LETOR file")->required();
  cmd_ev->add_option("--out", ev_out, "output directory")->required();
  cmd_ev->add_option("--outliers", ev_outliers, "outlier qids JSON");
  cmd_ev->add_option("--k", ev_k, "NDCG cutoff");
  cmd_ev->add_flag("--per-qg", ev_per_qg, "include per-QG NDCG in the report");

  // ---- data transforms ----
  auto* cmd_bin = app.add_subcommand("gen-binary-labels",
                                     "Gumbel implicit-feedback simulator");
  std::string bin_in, bin_out;
  double bin_t = 4.0, bin_tau = 4.5;
  uint64_t bin_seed = 1;
  cmd_bin->add_option("--in", bin_in, "graded LETOR file")->required();
  cmd_bin->add_option("--out", bin_out, "output directory")->required();
  cmd_bin->add_option("--t", bin_t, "temperature");
  cmd_bin->add_option("--tau", bin_tau, "tau_target sparsity control");
  cmd_bin->add_option("--seed", bin_seed, "rng seed");

  auto* cmd_sub = app.add_subcommand("subsample", "crowdsourced-label simulator");
  std::string sub_data, sub_out;
  double sub_fraction = 0.001;
  uint64_t sub_seed = 1;
  cmd_sub->add_option("--data", sub_data, "LETOR file")->required();
  cmd_sub->add_option("--out", sub_out, "output directory")->required();
  cmd_sub->add_option("--fraction", sub_fraction, "labeled QG fraction (0,1]");
  cmd_sub->add_option("--seed", sub_seed, "rng seed");

  auto* cmd_st = app.add_subcommand("stats", "dataset statistics JSON");
  std::string st_data, st_out;
  cmd_st->add_option("--data", st_data, "LETOR file")->required();
  cmd_st->add_option("--out", st_out, "output directory")->required();

  auto* cmd_ol = app.add_subcommand("detect-outliers",
                                    "histogram-gap outlier query groups");
  std::string ol_val, ol_test, ol_out;
  int ol_gap = 5;
  bool ol_tune = false;
  double ol_target = 0.01;
  cmd_ol->add_option("--val", ol_val, "validation LETOR file")->required();
  cmd_ol->add_option("--test", ol_test, "test LETOR file")->required();
  cmd_ol->add_option("--out", ol_out, "output directory")->required();
  cmd_ol->add_option("--gap", ol_gap, "gap parameter G");
  cmd_ol->add_flag("--tune", ol_tune, "tune G for the target outlier fraction");
  cmd_ol->add_option("--target", ol_target, "target outlier fraction when tuning");

  auto* cmd_pl = app.add_subcommand("pseudo-label",
                                    "score-bucket pseudo labels (31 buckets)");
  std::string pl_ckpt, pl_data, pl_out, pl_bins = "equal_width";
  cmd_pl->add_option("--checkpoint", pl_ckpt, "scoring checkpoint")->required();
  cmd_pl->add_option("--data", pl_data, "LETOR file to relabel")->required();
  cmd_pl->add_option("--out", pl_out, "output directory")->required();
  cmd_pl->add_option("--bins", pl_bins, "equal_width|equal_frequency");

  auto* cmd_pca = app.add_subcommand("pca", "fit PCA features; optionally enrich");
  std::string pca_data, pca_out, pca_apply;
  int pca_k = 10;
  cmd_pca->add_option("--data", pca_data, "LETOR file to fit on")->required();
  cmd_pca->add_option("--out", pca_out, "output directory")->required();
  cmd_pca->add_option("--k", pca_k, "component count (presets 5/10/15)");
  cmd_pca->add_option("--apply", pca_apply, "LETOR file to enrich");

  auto* cmd_cb = app.add_subcommand("combine",
                                    "combine two finetuned encoders");
  std::string cb_a, cb_b, cb_train, cb_val, cb_out;
  double cb_dropout = 0.0;
  int cb_epochs = 200, cb_batch = 1000, cb_k = 5;
  double cb_lr = 5e-5;
  uint64_t cb_seed = 1;
  cmd_cb->add_option("--ckpt-a", cb_a)->required();
  cmd_cb->add_option("--ckpt-b", cb_b)->required();
  cmd_cb->add_option("--train", cb_train)->required();
  cmd_cb->add_option("--val", cb_val)->required();
  cmd_cb->add_option("--out", cb_out)->required();
  cmd_cb->add_option("--dropout", cb_dropout, "0.0 or 0.7 in the recipe");
  cmd_cb->add_option("--epochs", cb_epochs);
  cmd_cb->add_option("--lr", cb_lr);
  cmd_cb->add_option("--batch-items", cb_batch);
  cmd_cb->add_option("--k", cb_k);
  cmd_cb->add_option("--seed", cb_seed);

  auto* cmd_em = app.add_subcommand("embed-dump", "dump encoder embeddings CSV");
  std::string em_ckpt, em_data, em_out;
  cmd_em->add_option("--checkpoint", em_ckpt)->required();
  cmd_em->add_option("--data", em_data)->required();
  cmd_em->add_option("--out", em_out)->required();

  auto* cmd_bn = app.add_subcommand("bench-losses",
                                    "wall-clock scaling of the SSL losses");
  std::string bn_methods = "simclr,simclr_rank,simsiam";
  std::string bn_sizes = "8,16,32,64";
  std::string bn_out;
  int bn_list = 32, bn_dim = 32, bn_reps = 5;
  uint64_t bn_seed = 1;
  cmd_bn->add_option("--methods", bn_methods, "comma list");
  cmd_bn->add_option("--batch-sizes", bn_sizes, "comma list of QG counts");
  cmd_bn->add_option("--list-size", bn_list, "items per QG");
  cmd_bn->add_option("--dim", bn_dim, "embedding dim");
  cmd_bn->add_option("--repeats", bn_reps, "timing repeats");
  cmd_bn->add_option("--seed", bn_seed);
  cmd_bn->add_option("--out", bn_out, "output directory")->required();

  auto* cmd_gs = app.add_subcommand("gen-synth",
                                    "synthetic 2-cluster ranking dataset");
  std::string gs_out;
  SynthConfig gs_cfg;
  int gs_val_groups = 300, gs_test_groups = 500;
  cmd_gs->add_option("--out", gs_out)->required();
  cmd_gs->add_option("--groups", gs_cfg.n_groups, "training QGs");
  cmd_gs->add_option("--val-groups", gs_val_groups);
  cmd_gs->add_option("--test-groups", gs_test_groups);
  cmd_gs->add_option("--items", gs_cfg.items_per_group);
  cmd_gs->add_option("--dim", gs_cfg.feature_dim);
  cmd_gs->add_option("--signal-dims", gs_cfg.n_signal_dims);
  cmd_gs->add_option("--separation", gs_cfg.separation);
  cmd_gs->add_option("--noise", gs_cfg.noise);
  cmd_gs->add_option("--distractor", gs_cfg.distractor_scale);
  cmd_gs->add_option("--pos-rate", gs_cfg.positive_rate);
  cmd_gs->add_option("--seed", gs_cfg.seed);

  // ---- sweep ----
  auto* cmd_sw = app.add_subcommand("sweep",
                                    "label-fraction x trials experiment grid");
  std::string sw_train, sw_val, sw_test, sw_out;
  std::string sw_methods = "simclr_rank,scratch";
  std::string sw_fractions = "0.01,0.1,1.0";
  int sw_trials = 3, sw_jobs = 1, sw_gap = 0, sw_k = 5;
  uint64_t sw_seed = 1;
  EncoderOpts sw_enc;
  PretrainOpts sw_pre;
  FinetuneOpts sw_ft;
  cmd_sw->add_option("--train", sw_train)->required();
  cmd_sw->add_option("--val", sw_val)->required();
  cmd_sw->add_option("--test", sw_test)->required();
  cmd_sw->add_option("--out", sw_out)->required();
  cmd_sw->add_option("--methods", sw_methods,
                     "comma list: scratch|simclr|simclr_rank|simclr_sample|simsiam");
  cmd_sw->add_option("--fractions", sw_fractions, "comma list in (0,1]");
  cmd_sw->add_option("--trials", sw_trials);
  cmd_sw->add_option("--jobs", sw_jobs, "parallel workers");
  cmd_sw->add_option("--gap", sw_gap, "outlier gap G (0 = tune to 1%)");
  cmd_sw->add_option("--sweep-k", sw_k, "NDCG cutoff");
  cmd_sw->add_option("--base-seed", sw_seed, "trial i uses base-seed + i");
  sw_enc.attach(cmd_sw);
  sw_pre.attach(cmd_sw, "pt-");
  sw_ft.attach(cmd_sw, "ft-");

  CLI11_PARSE(app, argc, argv);

  try {
    Stopwatch watch;

    if (cmd_pre->parsed()) {
      fs::path dir = ensure_out_dir(pre_out);
      Dataset train = load_letor(pre_train);
      std::optional<Dataset> val;
      if (!pre_val.empty()) val = load_letor(pre_val);
      PretrainConfig cfg = pre_opts.config(pre_seed);
      std::ofstream log(dir / "pretrain_log.jsonl");
      PretrainResult r = pretrain_run(train, val ? &*val : nullptr,
                                      pre_enc.config(train.feature_dim), cfg,
                                      &log);
      save_checkpoint(bundle_to_checkpoint(r.bundle),
                      (dir / "pretrain.ckpt").string());
      json config = {{"train", pre_train},      {"val", pre_val},
                     {"seed", pre_seed},        {"encoder", pre_enc.to_json()},
                     {"pretrain", pre_opts.to_json()}};
      write_manifest(dir, "pretrain", config,
                     {"pretrain.ckpt", "pretrain_log.jsonl"}, watch.ms(),
                     {pre_seed});
    }

    if (cmd_ft->parsed() || cmd_tr->parsed()) {
      bool scratch = cmd_tr->parsed();
      fs::path dir = ensure_out_dir(scratch ? tr_out : ft_out);
      Dataset train = load_letor(scratch ? tr_train : ft_train);
      Dataset val = load_letor(scratch ? tr_val : ft_val);
      uint64_t seed = scratch ? tr_seed : ft_seed;
      const FinetuneOpts& opts = scratch ? tr_opts : ft_opts;
      ModelBundle encoder;
      if (scratch) {
        encoder.encoder =
            make_resnet(tr_enc.config(train.feature_dim), derive_seed(seed, 1));
      } else {
        encoder = load_bundle(ft_ckpt);
      }
      FinetuneConfig cfg = opts.config(seed, train.label_kind);
      std::ofstream log(dir / "finetune_log.jsonl");
      FinetuneResult r = finetune_run(encoder, !scratch, train, val, cfg, &log);
      save_checkpoint(bundle_to_checkpoint(r.best),
                      (dir / "finetune.ckpt").string());
      json report{{"best_epoch", r.best_epoch},
                  {"best_val_ndcg", r.best_val_ndcg},
                  {"checkpoint", "finetune.ckpt"}};
      write_json(dir / "finetune_report.json", report);
      json config = {{"train", scratch ? tr_train : ft_train},
                     {"val", scratch ? tr_val : ft_val},
                     {"checkpoint", scratch ? "" : ft_ckpt},
                     {"seed", seed},
                     {"finetune", opts.to_json()}};
      write_manifest(dir, scratch ? "train" : "finetune", config,
                     {"finetune.ckpt", "finetune_log.jsonl",
                      "finetune_report.json"},
                     watch.ms(), {seed});
    }

    if (cmd_sc->parsed()) {
      fs::path dir = ensure_out_dir(sc_out);
      Dataset data = load_letor(sc_data);
      std::vector<std::vector<double>> scores;
      if (sc_combined) {
        CombinedModel m = combined_from_checkpoint(load_checkpoint(sc_ckpt));
        scores = score_dataset_combined(m, data);
      } else {
        ModelBundle b = load_bundle(sc_ckpt);
        scores = score_dataset(b, data);
      }
      write_text(dir / "scores.csv", scores_to_csv(data, scores));
      write_manifest(dir, "score",
                     {{"checkpoint", sc_ckpt},
                      {"data", sc_data},
                      {"combined", sc_combined}},
                     {"scores.csv"}, watch.ms());
    }

    if (cmd_ev->parsed()) {
      fs::path dir = ensure_out_dir(ev_out);
      Dataset test = load_letor(ev_test);
      std::vector<std::vector<double>> scores =
          align_scores(read_scores_csv(ev_pred), test);
      std::set<std::string> outliers;
      if (!ev_outliers.empty()) outliers = read_qid_set(ev_outliers);
      MetricsReport r = evaluate_scores(
          test, scores, ev_k, outliers.empty() ? nullptr : &outliers,
          ev_per_qg);
      write_json(dir / "metrics.json", r.to_json());
      write_manifest(dir, "eval",
                     {{"pred", ev_pred},
                      {"test", ev_test},
                      {"outliers", ev_outliers},
                      {"k", ev_k}},
                     {"metrics.json"}, watch.ms());
    }

    if (cmd_bin->parsed()) {
      fs::path dir = ensure_out_dir(bin_out);
      Dataset in = load_letor(bin_in);
      BinaryLabelConfig cfg{bin_t, bin_tau, bin_seed};
      Dataset out = generate_binary_labels(in, cfg);
      save_letor(out, (dir / "binary.letor").string());
      LabelMask positives = positives_mask(out);
      write_json(dir / "binary_stats.json",
                 dataset_stats(out, &positives).to_json());
      write_manifest(dir, "gen-binary-labels",
                     {{"in", bin_in}, {"t", bin_t}, {"tau", bin_tau},
                      {"seed", bin_seed}},
                     {"binary.letor", "binary_stats.json"}, watch.ms(),
                     {bin_seed});
    }

    if (cmd_sub->parsed()) {
      fs::path dir = ensure_out_dir(sub_out);
      Dataset data = load_letor(sub_data);
      LabelMask mask = subsample_labels(data, sub_fraction, sub_seed);
      Dataset labeled = labeled_subset(data, mask);
      save_letor(labeled, (dir / "labeled.letor").string());
      json mask_json{{"fraction", sub_fraction},
                     {"seed", sub_seed},
                     {"labeled_qids", mask.labeled_qids}};
      write_json(dir / "mask.json", mask_json);
      write_manifest(dir, "subsample",
                     {{"data", sub_data}, {"fraction", sub_fraction},
                      {"seed", sub_seed}},
                     {"labeled.letor", "mask.json"}, watch.ms(), {sub_seed});
    }

    if (cmd_st->parsed()) {
      fs::path dir = ensure_out_dir(st_out);
      Dataset data = load_letor(st_data);
      write_json(dir / "stats.json", dataset_stats(data).to_json());
      write_manifest(dir, "stats", {{"data", st_data}}, {"stats.json"},
                     watch.ms());
    }

    if (cmd_ol->parsed()) {
      fs::path dir = ensure_out_dir(ol_out);
      Dataset val = load_letor(ol_val);
      Dataset test = load_letor(ol_test);
      int gap = ol_gap;
      if (ol_tune) gap = tune_gap_parameter(val, test, ol_target);
      OutlierThresholds th = fit_outlier_thresholds(val, gap);
      std::set<std::string> qids = detect_outlier_qgs(th, test);
      write_json(dir / "outlier_thresholds.json", th.to_json());
      write_json(dir / "outlier_qids.json",
                 json{{"gap", gap},
                      {"n_test_qgs", test.groups.size()},
                      {"n_outlier_qgs", qids.size()},
                      {"outlier_qids", qids}});
      write_manifest(dir, "detect-outliers",
                     {{"val", ol_val}, {"test", ol_test}, {"gap", gap},
                      {"tuned", ol_tune}, {"target", ol_target}},
                     {"outlier_thresholds.json", "outlier_qids.json"},
                     watch.ms());
    }

    if (cmd_pl->parsed()) {
      fs::path dir = ensure_out_dir(pl_out);
      Dataset data = load_letor(pl_data);
      ModelBundle b = load_bundle(pl_ckpt);
      Dataset out =
          pseudo_label(scorer_from_bundle(b), data, binning_mode_from_name(pl_bins));
      {
        std::ofstream f(dir / "pseudo.letor", std::ios::binary);
        if (!f) fail(ErrorCode::IoError, "cannot write pseudo.letor");
        f << "# pseudo\n";
        write_letor(out, f);
      }
      write_manifest(dir, "pseudo-label",
                     {{"checkpoint", pl_ckpt}, {"data", pl_data},
                      {"bins", pl_bins}},
                     {"pseudo.letor"}, watch.ms());
    }

    if (cmd_pca->parsed()) {
      fs::path dir = ensure_out_dir(pca_out);
      Dataset data = load_letor(pca_data);
      PcaModel m = fit_pca(features_matrix(data), pca_k);
      save_checkpoint(m.to_checkpoint(), (dir / "pca.ckpt").string());
      std::vector<std::string> artifacts{"pca.ckpt"};
      if (!pca_apply.empty()) {
        Dataset target = load_letor(pca_apply);
        save_letor(enrich(target, m), (dir / "enriched.letor").string());
        artifacts.push_back("enriched.letor");
      }
      write_manifest(dir, "pca",
                     {{"data", pca_data}, {"k", pca_k}, {"apply", pca_apply}},
                     artifacts, watch.ms());
    }

    if (cmd_cb->parsed()) {
      fs::path dir = ensure_out_dir(cb_out);
      ModelBundle a = load_bundle(cb_a);
      ModelBundle b = load_bundle(cb_b);
      Dataset train = load_letor(cb_train);
      Dataset val = load_letor(cb_val);
      CombineConfig cfg;
      cfg.dropout = cb_dropout;
      cfg.epochs = cb_epochs;
      cfg.lr = cb_lr;
      cfg.batch_items = cb_batch;
      cfg.ndcg_k = cb_k;
      cfg.seed = cb_seed;
      std::ofstream log(dir / "combine_log.jsonl");
      CombineResult r = combine_encoders(a, b, train, val, cfg, &log);
      save_checkpoint(combined_to_checkpoint(r.model),
                      (dir / "combined.ckpt").string());
      write_json(dir / "combine_report.json",
                 json{{"best_epoch", r.best_epoch},
                      {"best_val_ndcg", r.best_val_ndcg},
                      {"embedding_dim",
                       r.model.scorer.W.rows()}});
      write_manifest(dir, "combine",
                     {{"ckpt_a", cb_a}, {"ckpt_b", cb_b}, {"train", cb_train},
                      {"val", cb_val}, {"dropout", cb_dropout},
                      {"epochs", cb_epochs}, {"lr", cb_lr}, {"seed", cb_seed}},
                     {"combined.ckpt", "combine_log.jsonl",
                      "combine_report.json"},
                     watch.ms(), {cb_seed});
    }

    if (cmd_em->parsed()) {
      fs::path dir = ensure_out_dir(em_out);
      Dataset data = load_letor(em_data);
      ModelBundle b = load_bundle(em_ckpt);
      Tensor x = features_matrix(data);
      if (b.standardizer) x = b.standardizer->apply(x);
      Tensor emb = encoder_forward(b.encoder, x, Mode::eval);
      std::ostringstream out;
      out << "qid,item_index";
      for (int j = 0; j < emb.cols(); ++j) out << ",e" << j;
      out << '\n';
      int row = 0;
      for (const QueryGroup& g : data.groups)
        for (size_t i = 0; i < g.items.size(); ++i, ++row) {
          out << g.qid << ',' << i;
          for (int j = 0; j < emb.cols(); ++j)
            out << ',' << format_double(emb.at(row, j));
          out << '\n';
        }
      write_text(dir / "embeddings.csv", out.str());
      write_manifest(dir, "embed-dump",
                     {{"checkpoint", em_ckpt}, {"data", em_data}},
                     {"embeddings.csv"}, watch.ms());
    }

    if (cmd_bn->parsed()) {
      fs::path dir = ensure_out_dir(bn_out);
      BenchConfig cfg;
      cfg.methods.clear();
      {
        std::istringstream ss(bn_methods);
        std::string tok;
        while (std::getline(ss, tok, ','))
          cfg.methods.push_back(pretrain_method_from_name(tok));
      }
      cfg.batch_qgs.clear();
      {
        std::istringstream ss(bn_sizes);
        std::string tok;
        while (std::getline(ss, tok, ','))
          cfg.batch_qgs.push_back(std::stoi(tok));
      }
      cfg.list_size = bn_list;
      cfg.dim = bn_dim;
      cfg.repeats = bn_reps;
      cfg.seed = bn_seed;
      BenchReport r = bench_losses(cfg);
      write_text(dir / "bench.csv", r.to_csv());
      write_json(dir / "bench_summary.json",
                 json{{"fitted_exponent", r.fitted_exponent},
                      {"rank_speedup_at_max_b", r.rank_speedup_at_max_b},
                      {"list_size", cfg.list_size},
                      {"dim", cfg.dim}});
      write_manifest(dir, "bench-losses",
                     {{"methods", bn_methods}, {"batch_sizes", bn_sizes},
                      {"list_size", bn_list}, {"dim", bn_dim},
                      {"repeats", bn_reps}, {"seed", bn_seed}},
                     {"bench.csv", "bench_summary.json"}, watch.ms());
    }

    if (cmd_gs->parsed()) {
      fs::path dir = ensure_out_dir(gs_out);
      SynthConfig train_cfg = gs_cfg;
      SynthConfig val_cfg = gs_cfg;
      val_cfg.n_groups = gs_val_groups;
      val_cfg.seed = derive_seed(gs_cfg.seed, 0x7A1);
      SynthConfig test_cfg = gs_cfg;
      test_cfg.n_groups = gs_test_groups;
      test_cfg.seed = derive_seed(gs_cfg.seed, 0x7E5);
      save_letor(make_synthetic(train_cfg), (dir / "train.letor").string());
      save_letor(make_synthetic(val_cfg), (dir / "val.letor").string());
      save_letor(make_synthetic(test_cfg), (dir / "test.letor").string());
      write_manifest(dir, "gen-synth",
                     {{"groups", gs_cfg.n_groups},
                      {"val_groups", gs_val_groups},
                      {"test_groups", gs_test_groups},
                      {"items", gs_cfg.items_per_group},
                      {"dim", gs_cfg.feature_dim},
                      {"signal_dims", gs_cfg.n_signal_dims},
                      {"separation", gs_cfg.separation},
                      {"noise", gs_cfg.noise},
                      {"distractor", gs_cfg.distractor_scale},
                      {"pos_rate", gs_cfg.positive_rate},
                      {"seed", gs_cfg.seed}},
                     {"train.letor", "val.letor", "test.letor"}, watch.ms(),
                     {gs_cfg.seed});
    }

    if (cmd_sw->parsed()) {
      fs::path dir = ensure_out_dir(sw_out);
      Dataset train = load_letor(sw_train);
      Dataset val = load_letor(sw_val);
      Dataset test = load_letor(sw_test);

      SweepPlan plan;
      {
        std::istringstream ss(sw_methods);
        std::string tok;
        while (std::getline(ss, tok, ',')) plan.methods.push_back(tok);
      }
      {
        std::istringstream ss(sw_fractions);
        std::string tok;
        while (std::getline(ss, tok, ','))
          plan.fractions.push_back(std::stod(tok));
      }
      plan.trials = sw_trials;
      plan.base_seed = sw_seed;
      if (plan.methods.empty() || plan.fractions.empty() || plan.trials < 1)
        fail(ErrorCode::InvalidConfig, "sweep: empty methods/fractions/trials");

      // Outlier set is fixed across the whole sweep.
      int gap = sw_gap;
      if (gap == 0) gap = tune_gap_parameter(val, test, 0.01);
      std::set<std::string> outlier_qids =
          detect_outlier_qgs(fit_outlier_thresholds(val, gap), test);

      struct Task {
        size_t method_idx;
        int trial;
      };
      std::vector<Task> tasks;
      for (size_t m = 0; m < plan.methods.size(); ++m)
        for (int t = 0; t < plan.trials; ++t) tasks.push_back({m, t});
      std::vector<std::vector<SweepRow>> results(tasks.size());

      auto run_task = [&](size_t task_idx) {
        const Task& task = tasks[task_idx];
        const std::string& method = plan.methods[task.method_idx];
        uint64_t seed = plan.base_seed + static_cast<uint64_t>(task.trial);
        ModelBundle encoder;
        bool pretrained = method != "scratch";
        if (pretrained) {
          PretrainConfig pcfg = sw_pre.config(seed);
          pcfg.method = pretrain_method_from_name(method);
          encoder = pretrain_run(train, nullptr,
                                 sw_enc.config(train.feature_dim), pcfg,
                                 nullptr)
                        .bundle;
        }
        for (double fraction : plan.fractions) {
          LabelMask mask = subsample_labels(train, fraction, seed);
          Dataset labeled = labeled_subset(train, mask);
          ModelBundle enc = encoder;
          if (!pretrained)
            enc.encoder = make_resnet(sw_enc.config(train.feature_dim),
                                      derive_seed(seed, 1));
          FinetuneConfig fcfg = sw_ft.config(seed, labeled.label_kind);
          FinetuneResult fr =
              finetune_run(enc, pretrained, labeled, val, fcfg, nullptr);
          std::vector<std::vector<double>> scores =
              score_dataset(fr.best, test);
          MetricsReport mr = evaluate_scores(
              test, scores, sw_k,
              outlier_qids.empty() ? nullptr : &outlier_qids, false);
          SweepRow row;
          row.method = method;
          row.fraction = fraction;
          row.trial = task.trial;
          row.ndcg = mr.ndcg_mean;
          row.outlier = mr.outlier_ndcg_mean ? *mr.outlier_ndcg_mean
                                             : std::nan("");
          row.val_ndcg = fr.best_val_ndcg;
          results[task_idx].push_back(row);
        }
      };

      if (sw_jobs <= 1) {
        for (size_t i = 0; i < tasks.size(); ++i) run_task(i);
      } else {
        std::atomic<size_t> next{0};
        auto worker = [&] {
          for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            run_task(i);
          }
        };
        std::vector<std::thread> pool;
        int n_workers = std::min<int>(sw_jobs, static_cast<int>(tasks.size()));
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
      }

      // Rows in fixed (method, fraction, trial) order, independent of
      // completion order.
      std::vector<SweepRow> rows;
      for (size_t m = 0; m < plan.methods.size(); ++m)
        for (double fraction : plan.fractions)
          for (size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].method_idx != m) continue;
            for (const SweepRow& r : results[i])
              if (r.fraction == fraction) rows.push_back(r);
          }

      std::ostringstream csv;
      csv << "method,fraction,trial,ndcg,outlier_ndcg,val_ndcg\n";
      for (const SweepRow& r : rows) {
        csv << r.method << ',' << format_double(r.fraction) << ',' << r.trial
            << ',' << format_double(r.ndcg) << ',';
        if (!std::isnan(r.outlier)) csv << format_double(r.outlier);
        csv << ',' << format_double(r.val_ndcg) << '\n';
      }
      write_text(dir / "sweep.csv", csv.str());

      // Aggregates, pairwise significance, and the best-of selector.
      json summary;
      summary["gap"] = gap;
      summary["n_outlier_qgs"] = outlier_qids.size();
      json aggregates = json::array();
      json ttests = json::array();
      json best_of = json::array();
      auto rows_for = [&](const std::string& method, double fraction) {
        std::vector<double> ndcgs, vals;
        for (const SweepRow& r : rows)
          if (r.method == method && r.fraction == fraction) {
            ndcgs.push_back(r.ndcg);
            vals.push_back(r.val_ndcg);
          }
        return std::pair{ndcgs, vals};
      };
      for (double fraction : plan.fractions) {
        std::string best_method;
        double best_val = -1.0;
        for (const std::string& method : plan.methods) {
          auto [ndcgs, vals] = rows_for(method, fraction);
          TrialStats ts = trial_stats(ndcgs);
          TrialStats vs = trial_stats(vals);
          aggregates.push_back(json{{"method", method},
                                    {"fraction", fraction},
                                    {"ndcg", ts.to_json()},
                                    {"val_ndcg_mean", vs.mean}});
          if (vs.mean > best_val) {
            best_val = vs.mean;
            best_method = method;
          }
        }
        best_of.push_back(json{{"fraction", fraction},
                               {"selected_by", "val_ndcg_mean"},
                               {"method", best_method}});
        for (size_t a = 0; a < plan.methods.size(); ++a)
          for (size_t b = 0; b < plan.methods.size(); ++b) {
            if (a == b) continue;
            auto [na, va] = rows_for(plan.methods[a], fraction);
            auto [nb, vb] = rows_for(plan.methods[b], fraction);
            if (na.size() < 2 || nb.size() < 2) continue;
            TTestResult t = one_sided_t_test(na, nb);
            ttests.push_back(json{{"fraction", fraction},
                                  {"greater", plan.methods[a]},
                                  {"lesser", plan.methods[b]},
                                  {"t", t.t},
                                  {"p", t.p},
                                  {"df", t.df}});
          }
      }
      summary["aggregates"] = aggregates;
      summary["t_tests"] = ttests;
      summary["best_of"] = best_of;
      write_json(dir / "sweep_summary.json", summary);

      std::vector<uint64_t> seeds;
      for (int t = 0; t < plan.trials; ++t)
        seeds.push_back(plan.base_seed + static_cast<uint64_t>(t));
      write_manifest(dir, "sweep",
                     {{"train", sw_train}, {"val", sw_val}, {"test", sw_test},
                      {"methods", sw_methods}, {"fractions", sw_fractions},
                      {"trials", sw_trials}, {"jobs", sw_jobs},
                      {"gap", gap}, {"base_seed", sw_seed},
                      {"encoder", sw_enc.to_json()},
                      {"pretrain", sw_pre.to_json()},
                      {"finetune", sw_ft.to_json()}},
                     {"sweep.csv", "sweep_summary.json"}, watch.ms(), seeds);
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", error_code_name(e.code())},
                      {"message", e.what()}}
                     .dump()
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Unexpected"}, {"message", e.what()}}.dump()
              << std::endl;
    return 1;
  }
  return 0;
}
