#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltr/augment.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

enum class Mode { train, eval };

// Maps trainable parameters to their leaf nodes so a trainer can read
// gradients after backward(). Passing nullptr binds parameters as constants
// (frozen).
struct Bound {
  std::vector<std::pair<Tensor*, int>> entries;
  void add(Tensor* p, int node) { entries.emplace_back(p, node); }
};

Var bind_param(Tape& t, Tensor& p, Bound* bound);

struct LinearLayer {
  Tensor W;  // in x out
  Tensor b;  // 1 x out
};
LinearLayer make_linear(int in, int out, Rng& rng);
Var linear_forward(Tape& t, LinearLayer& l, Var x, Bound* bound);

struct BatchNormLayer {
  Tensor gamma, beta;               // 1 x d
  Tensor running_mean, running_var;  // 1 x d
  double momentum = 0.1;
  double eps = 1e-5;
};
BatchNormLayer make_batchnorm(int dim);
// Train mode normalizes with batch statistics and updates the running
// buffers; eval mode is a pure function of the input.
Var bn_forward(Tape& t, BatchNormLayer& bn, Var x, Mode mode, Bound* bound);

// Residual block: x + dropout(lin2(dropout(relu(lin1(batchnorm(x)))))).
struct ResNetBlock {
  BatchNormLayer bn;
  LinearLayer lin1, lin2;
};

struct TabularResNetConfig {
  int input_dim = 0;
  int width = 136;
  int n_blocks = 3;
  double dropout_hidden = 0.0;    // after the in-block relu
  double dropout_residual = 0.0;  // before the residual add
  bool with_final_linear = false;

  nlohmann::json to_json() const;
  static TabularResNetConfig from_json(const nlohmann::json& j);
};

struct TabularResNet {
  TabularResNetConfig cfg;
  LinearLayer input;        // input_dim -> width
  std::vector<ResNetBlock> blocks;
  LinearLayer final_linear;  // width -> 1, present iff cfg.with_final_linear

  int embedding_dim() const { return cfg.width; }
};

TabularResNet make_resnet(const TabularResNetConfig& cfg, uint64_t seed);
Var resnet_forward(Tape& t, TabularResNet& m, Var x, Mode mode,
                   uint64_t dropout_seed, Bound* bound);
// Convenience single-batch forward on a private tape.
Tensor encoder_forward(TabularResNet& m, const Tensor& x, Mode mode,
                       uint64_t dropout_seed = 0);

enum class HeadKind { linear, mlp3, projector, predictor };
std::string head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& s);

struct HeadConfig {
  HeadKind kind = HeadKind::linear;
  int in_dim = 0;
  int hidden = 0;   // ignored for linear
  int out_dim = 1;  // projector/predictor emit in_dim-sized outputs

  std::vector<int> layer_dims() const;  // e.g. mlp3 -> {in,h,h,out}
  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

// MLP with relu between layers and a linear last layer.
struct Mlp {
  HeadConfig cfg;
  std::vector<LinearLayer> layers;
};
Mlp make_head(const HeadConfig& cfg, uint64_t seed);
Var head_forward(Tape& t, Mlp& m, Var x, Bound* bound);
Tensor head_eval(Mlp& m, const Tensor& x);

// --- checkpoint container -------------------------------------------------
// One file: 8-byte magic, u64 manifest length, JSON manifest (configs,
// tensor names/shapes/offsets, metadata), then the raw little-endian f64
// blob. Round trips are bit exact.

struct Checkpoint {
  int format_version = 1;
  nlohmann::json configs;
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json metadata;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// The full trainable state of one ranker.
struct ModelBundle {
  TabularResNet encoder;
  std::optional<Mlp> projector, predictor, head;
  std::optional<Standardizer> standardizer;
  nlohmann::json metadata;
};

Checkpoint bundle_to_checkpoint(const ModelBundle& b);
ModelBundle bundle_from_checkpoint(const Checkpoint& ck);

// Named parameter list in deterministic order (weights and biases only;
// batchnorm running stats are buffers, not parameters).
std::vector<std::pair<std::string, Tensor*>> collect_params(ModelBundle& b);

void append_adam_state(Checkpoint& ck, const AdamState& st);
std::optional<AdamState> adam_state_from_checkpoint(const Checkpoint& ck);

// Scores one feature batch: head(encoder(x)), eval mode, one value per row.
std::vector<double> score_batch(ModelBundle& b, const Tensor& x);

}  // namespace ltr
