#include "ltr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ltr {

Var bind_param(Tape& t, Tensor& p, Bound* bound) {
  Var v = leaf(t, p, bound != nullptr);
  if (bound) bound->add(&p, v.id);
  return v;
}

LinearLayer make_linear(int in, int out, Rng& rng) {
  if (in < 1 || out < 1)
    fail(ErrorCode::InvalidConfig, "linear layer dims must be >= 1");
  LinearLayer l{Tensor(in, out), Tensor(1, out)};
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : l.W.data()) v = (2.0 * rng.uniform() - 1.0) * s;
  for (double& v : l.b.data()) v = (2.0 * rng.uniform() - 1.0) * s;
  return l;
}

Var linear_forward(Tape& t, LinearLayer& l, Var x, Bound* bound) {
  if (x.val().cols() != l.W.rows())
    fail(ErrorCode::ShapeMismatch, "linear_forward: input dim mismatch");
  Var w = bind_param(t, l.W, bound);
  Var b = bind_param(t, l.b, bound);
  return add_rowvec(matmul(x, w), b);
}

BatchNormLayer make_batchnorm(int dim) {
  BatchNormLayer bn;
  bn.gamma = Tensor(1, dim, 1.0);
  bn.beta = Tensor(1, dim, 0.0);
  bn.running_mean = Tensor(1, dim, 0.0);
  bn.running_var = Tensor(1, dim, 1.0);
  return bn;
}

Var bn_forward(Tape& t, BatchNormLayer& bn, Var x, Mode mode, Bound* bound) {
  Var gamma = bind_param(t, bn.gamma, bound);
  Var beta = bind_param(t, bn.beta, bound);
  if (mode == Mode::eval)
    return batchnorm_eval(x, gamma, beta, bn.running_mean, bn.running_var,
                          bn.eps);
  Tensor batch_mean, batch_var;
  Var out = batchnorm_train(x, gamma, beta, bn.eps, &batch_mean, &batch_var);
  const int n = x.val().rows();
  const double unbias = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
  for (int j = 0; j < batch_mean.cols(); ++j) {
    bn.running_mean.at(0, j) = (1.0 - bn.momentum) * bn.running_mean.at(0, j) +
                               bn.momentum * batch_mean.at(0, j);
    bn.running_var.at(0, j) = (1.0 - bn.momentum) * bn.running_var.at(0, j) +
                              bn.momentum * batch_var.at(0, j) * unbias;
  }
  return out;
}

nlohmann::json TabularResNetConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"width", width},
          {"n_blocks", n_blocks},
          {"dropout_hidden", dropout_hidden},
          {"dropout_residual", dropout_residual},
          {"with_final_linear", with_final_linear}};
}

TabularResNetConfig TabularResNetConfig::from_json(const nlohmann::json& j) {
  TabularResNetConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.dropout_hidden = j.at("dropout_hidden").get<double>();
  c.dropout_residual = j.at("dropout_residual").get<double>();
  c.with_final_linear = j.at("with_final_linear").get<bool>();
  return c;
}

TabularResNet make_resnet(const TabularResNetConfig& cfg, uint64_t seed) {
  if (cfg.input_dim < 1 || cfg.width < 1 || cfg.n_blocks < 1)
    fail(ErrorCode::InvalidConfig, "resnet config: dims/blocks must be >= 1");
  TabularResNet m;
  m.cfg = cfg;
  uint64_t layer = 0;
  {
    Rng rng(derive_seed(seed, layer++));
    m.input = make_linear(cfg.input_dim, cfg.width, rng);
  }
  for (int b = 0; b < cfg.n_blocks; ++b) {
    ResNetBlock blk;
    blk.bn = make_batchnorm(cfg.width);
    Rng r1(derive_seed(seed, layer++));
    blk.lin1 = make_linear(cfg.width, cfg.width, r1);
    Rng r2(derive_seed(seed, layer++));
    blk.lin2 = make_linear(cfg.width, cfg.width, r2);
    m.blocks.push_back(std::move(blk));
  }
  if (cfg.with_final_linear) {
    Rng rf(derive_seed(seed, layer++));
    m.final_linear = make_linear(cfg.width, 1, rf);
  }
  return m;
}

Var resnet_forward(Tape& t, TabularResNet& m, Var x, Mode mode,
                   uint64_t dropout_seed, Bound* bound) {
  if (x.val().cols() != m.cfg.input_dim)
    fail(ErrorCode::ShapeMismatch, "resnet_forward: feature dim mismatch");
  Var h = linear_forward(t, m.input, x, bound);
  uint64_t site = 0;
  for (ResNetBlock& blk : m.blocks) {
    Var z = bn_forward(t, blk.bn, h, mode, bound);
    z = relu(linear_forward(t, blk.lin1, z, bound));
    if (mode == Mode::train && m.cfg.dropout_hidden > 0.0)
      z = dropout(z, m.cfg.dropout_hidden, derive_seed(dropout_seed, site));
    ++site;
    z = linear_forward(t, blk.lin2, z, bound);
    if (mode == Mode::train && m.cfg.dropout_residual > 0.0)
      z = dropout(z, m.cfg.dropout_residual, derive_seed(dropout_seed, site));
    ++site;
    h = add(h, z);
  }
  if (m.cfg.with_final_linear) h = linear_forward(t, m.final_linear, h, bound);
  return h;
}

Tensor encoder_forward(TabularResNet& m, const Tensor& x, Mode mode,
                       uint64_t dropout_seed) {
  Tape t;
  Var xv = leaf(t, x, false);
  return resnet_forward(t, m, xv, mode, dropout_seed, nullptr).val();
}

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::linear: return "linear";
    case HeadKind::mlp3: return "mlp3";
    case HeadKind::projector: return "projector";
    case HeadKind::predictor: return "predictor";
  }
  return "linear";
}

HeadKind head_kind_from_name(const std::string& s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "mlp3") return HeadKind::mlp3;
  if (s == "projector") return HeadKind::projector;
  if (s == "predictor") return HeadKind::predictor;
  fail(ErrorCode::InvalidConfig, "unknown head kind: " + s);
}

std::vector<int> HeadConfig::layer_dims() const {
  switch (kind) {
    case HeadKind::linear:
      return {in_dim, out_dim};
    case HeadKind::mlp3:
      return {in_dim, hidden, hidden, out_dim};
    case HeadKind::projector:
    case HeadKind::predictor:
      return {in_dim, hidden, out_dim};
  }
  return {};
}

nlohmann::json HeadConfig::to_json() const {
  return {{"kind", head_kind_name(kind)},
          {"in_dim", in_dim},
          {"hidden", hidden},
          {"out_dim", out_dim}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.kind = head_kind_from_name(j.at("kind").get<std::string>());
  c.in_dim = j.at("in_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.out_dim = j.at("out_dim").get<int>();
  return c;
}

Mlp make_head(const HeadConfig& cfg, uint64_t seed) {
  std::vector<int> dims = cfg.layer_dims();
  Mlp m;
  m.cfg = cfg;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    m.layers.push_back(make_linear(dims[i], dims[i + 1], rng));
  }
  return m;
}

Var head_forward(Tape& t, Mlp& m, Var x, Bound* bound) {
  Var h = x;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    h = linear_forward(t, m.layers[i], h, bound);
    if (i + 1 < m.layers.size()) h = relu(h);
  }
  return h;
}

Tensor head_eval(Mlp& m, const Tensor& x) {
  Tape t;
  Var xv = leaf(t, x, false);
  return head_forward(t, m, xv, nullptr).val();
}

// --- checkpoint I/O ----------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'L', 'T', 'R', 'C', 'K', 'P', 'T', '\n'};
constexpr int kFormatVersion = 1;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json manifest;
  manifest["format_version"] = ck.format_version;
  manifest["configs"] = ck.configs;
  manifest["metadata"] = ck.metadata;
  nlohmann::json tensor_list = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    tensor_list.push_back({{"name", name},
                           {"rows", t.rows()},
                           {"cols", t.cols()},
                           {"dtype", "f64"},
                           {"offset", offset}});
    offset += t.size();
  }
  manifest["tensors"] = tensor_list;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  std::string mtext = manifest.dump();
  uint64_t mlen = mtext.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& [name, t] : ck.tensors)
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    fail(ErrorCode::CorruptCheckpoint, path + ": bad magic");
  uint64_t mlen = 0;
  if (!in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen)))
    fail(ErrorCode::CorruptCheckpoint, path + ": truncated header");
  if (mlen > (1ULL << 30))
    fail(ErrorCode::CorruptCheckpoint, path + ": absurd manifest length");
  std::string mtext(mlen, '\0');
  if (!in.read(mtext.data(), static_cast<std::streamsize>(mlen)))
    fail(ErrorCode::CorruptCheckpoint, path + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint,
         path + ": manifest parse error: " + e.what());
  }
  Checkpoint ck;
  ck.format_version = manifest.at("format_version").get<int>();
  if (ck.format_version != kFormatVersion)
    fail(ErrorCode::VersionMismatch,
         path + ": unsupported checkpoint format version " +
             std::to_string(ck.format_version));
  ck.configs = manifest.at("configs");
  ck.metadata = manifest.at("metadata");
  for (const auto& entry : manifest.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    int rows = entry.at("rows").get<int>();
    int cols = entry.at("cols").get<int>();
    Tensor t(rows, cols);
    if (!in.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      fail(ErrorCode::CorruptCheckpoint, path + ": truncated tensor " + name);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// --- bundle <-> checkpoint -----------------------------------------------------

namespace {

void push_linear(std::vector<std::pair<std::string, Tensor*>>& out,
                 const std::string& prefix, LinearLayer& l) {
  out.emplace_back(prefix + ".W", &l.W);
  out.emplace_back(prefix + ".b", &l.b);
}

// Parameters plus batchnorm buffers, in deterministic order.
std::vector<std::pair<std::string, Tensor*>> all_named_tensors(
    ModelBundle& b) {
  std::vector<std::pair<std::string, Tensor*>> out;
  push_linear(out, "encoder.input", b.encoder.input);
  for (size_t i = 0; i < b.encoder.blocks.size(); ++i) {
    std::string p = "encoder.block" + std::to_string(i);
    ResNetBlock& blk = b.encoder.blocks[i];
    out.emplace_back(p + ".bn.gamma", &blk.bn.gamma);
    out.emplace_back(p + ".bn.beta", &blk.bn.beta);
    out.emplace_back(p + ".bn.running_mean", &blk.bn.running_mean);
    out.emplace_back(p + ".bn.running_var", &blk.bn.running_var);
    push_linear(out, p + ".lin1", blk.lin1);
    push_linear(out, p + ".lin2", blk.lin2);
  }
  if (b.encoder.cfg.with_final_linear)
    push_linear(out, "encoder.final", b.encoder.final_linear);
  auto push_mlp = [&out](const std::string& prefix, Mlp& m) {
    for (size_t i = 0; i < m.layers.size(); ++i)
      push_linear(out, prefix + ".l" + std::to_string(i), m.layers[i]);
  };
  if (b.projector) push_mlp("projector", *b.projector);
  if (b.predictor) push_mlp("predictor", *b.predictor);
  if (b.head) push_mlp("head", *b.head);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> collect_params(ModelBundle& b) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : all_named_tensors(b))
    if (name.find(".running_") == std::string::npos)
      out.emplace_back(name, t);
  return out;
}

Checkpoint bundle_to_checkpoint(const ModelBundle& b) {
  Checkpoint ck;
  ck.configs["encoder"] = b.encoder.cfg.to_json();
  ck.configs["projector"] =
      b.projector ? b.projector->cfg.to_json() : nlohmann::json(nullptr);
  ck.configs["predictor"] =
      b.predictor ? b.predictor->cfg.to_json() : nlohmann::json(nullptr);
  ck.configs["head"] =
      b.head ? b.head->cfg.to_json() : nlohmann::json(nullptr);
  if (b.standardizer) {
    ck.configs["standardizer"] = {{"mean", b.standardizer->mean},
                                  {"std", b.standardizer->std}};
  } else {
    ck.configs["standardizer"] = nullptr;
  }
  ck.metadata = b.metadata;
  ModelBundle& mb = const_cast<ModelBundle&>(b);  // read-only traversal
  for (auto& [name, t] : all_named_tensors(mb)) ck.tensors.emplace_back(name, *t);
  return ck;
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ck) {
  ModelBundle b;
  TabularResNetConfig enc_cfg =
      TabularResNetConfig::from_json(ck.configs.at("encoder"));
  b.encoder = make_resnet(enc_cfg, 0);
  auto load_head = [&ck](const char* key) -> std::optional<Mlp> {
    if (ck.configs.at(key).is_null()) return std::nullopt;
    return make_head(HeadConfig::from_json(ck.configs.at(key)), 0);
  };
  b.projector = load_head("projector");
  b.predictor = load_head("predictor");
  b.head = load_head("head");
  if (ck.configs.contains("standardizer") &&
      !ck.configs.at("standardizer").is_null()) {
    Standardizer s;
    s.mean = ck.configs.at("standardizer").at("mean").get<std::vector<double>>();
    s.std = ck.configs.at("standardizer").at("std").get<std::vector<double>>();
    b.standardizer = std::move(s);
  }
  b.metadata = ck.metadata;
  for (auto& [name, t] : all_named_tensors(b)) {
    const Tensor* src = ck.find(name);
    if (!src)
      fail(ErrorCode::CorruptCheckpoint, "checkpoint missing tensor " + name);
    if (!src->same_shape(*t))
      fail(ErrorCode::ShapeMismatch,
           "checkpoint tensor " + name + " has shape " +
               std::to_string(src->rows()) + "x" + std::to_string(src->cols()) +
               ", config implies " + std::to_string(t->rows()) + "x" +
               std::to_string(t->cols()));
    *t = *src;
  }
  return b;
}

void append_adam_state(Checkpoint& ck, const AdamState& st) {
  ck.metadata["adam_step"] = st.step;
  for (size_t i = 0; i < st.m.size(); ++i) {
    ck.tensors.emplace_back("adam.m." + std::to_string(i), st.m[i]);
    ck.tensors.emplace_back("adam.v." + std::to_string(i), st.v[i]);
  }
}

std::optional<AdamState> adam_state_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("adam_step")) return std::nullopt;
  AdamState st;
  st.step = ck.metadata.at("adam_step").get<long>();
  for (size_t i = 0;; ++i) {
    const Tensor* m = ck.find("adam.m." + std::to_string(i));
    const Tensor* v = ck.find("adam.v." + std::to_string(i));
    if (!m || !v) break;
    st.m.push_back(*m);
    st.v.push_back(*v);
  }
  return st;
}

std::vector<double> score_batch(ModelBundle& b, const Tensor& x) {
  if (!b.head) fail(ErrorCode::InvalidConfig, "bundle has no scoring head");
  Tensor input = b.standardizer ? b.standardizer->apply(x) : x;
  Tensor emb = encoder_forward(b.encoder, input, Mode::eval);
  Tensor s = head_eval(*b.head, emb);
  if (s.cols() != 1)
    fail(ErrorCode::ShapeMismatch, "scoring head must emit one value per item");
  return s.data();
}

}  // namespace ltr
