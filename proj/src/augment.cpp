#include "ltr/augment.hpp"

#include <cmath>

#include "ltr/error.hpp"

namespace ltr {

void AugmentSpec::validate() const {
  if (kind == Kind::zeroing) {
    if (param < 0.0 || param >= 1.0)
      fail(ErrorCode::InvalidConfig, "zeroing probability must be in [0, 1)");
  } else {
    if (!(param > 0.0))
      fail(ErrorCode::InvalidConfig, "gaussian scale must be > 0");
  }
}

std::string AugmentSpec::to_string() const {
  const char* name = kind == Kind::zeroing ? "zeroing" : "gaussian";
  return std::string(name) + ":" + std::to_string(param);
}

AugmentSpec AugmentSpec::parse(const std::string& s) {
  size_t colon = s.find(':');
  if (colon == std::string::npos)
    fail(ErrorCode::InvalidConfig,
         "augment spec must look like zeroing:0.1 or gaussian:1.0");
  std::string name = s.substr(0, colon);
  AugmentSpec spec;
  if (name == "zeroing") {
    spec.kind = Kind::zeroing;
  } else if (name == "gaussian") {
    spec.kind = Kind::gaussian;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown augmentation: " + name);
  }
  try {
    spec.param = std::stod(s.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidConfig, "bad augment parameter in: " + s);
  }
  spec.validate();
  return spec;
}

Tensor augment(const Tensor& features, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  Tensor out = features;
  if (spec.kind == AugmentSpec::Kind::zeroing) {
    if (spec.param == 0.0) return out;
    for (double& v : out.data())
      if (rng.uniform() < spec.param) v = 0.0;
  } else {
    for (double& v : out.data()) v += spec.param * rng.normal();
  }
  return out;
}

std::pair<Tensor, Tensor> make_positive_pair(const Tensor& features,
                                             const AugmentSpec& spec,
                                             Rng& rng) {
  Tensor v0 = augment(features, spec, rng);
  Tensor v1 = augment(features, spec, rng);
  return {std::move(v0), std::move(v1)};
}

Standardizer Standardizer::fit(const Tensor& features) {
  const int n = features.rows(), d = features.cols();
  if (n == 0) fail(ErrorCode::InvalidDataset, "cannot standardize empty data");
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = features.row_ptr(i);
    for (int j = 0; j < d; ++j) s.mean[j] += row[j];
  }
  for (int j = 0; j < d; ++j) s.mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    const double* row = features.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      double c = row[j] - s.mean[j];
      s.std[j] += c * c;
    }
  }
  for (int j = 0; j < d; ++j) {
    s.std[j] = std::sqrt(s.std[j] / n);
    if (s.std[j] == 0.0) s.std[j] = 1.0;  // constant feature: leave centered
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& features) const {
  if (features.cols() != static_cast<int>(mean.size()))
    fail(ErrorCode::ShapeMismatch, "standardizer dim mismatch");
  Tensor out = features;
  for (int i = 0; i < out.rows(); ++i) {
    double* row = out.row_ptr(i);
    for (int j = 0; j < out.cols(); ++j)
      row[j] = (row[j] - mean[j]) / std[j];
  }
  return out;
}

}  // namespace ltr
