#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ltr/rng.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

// Stochastic feature corruptions producing positive pairs for pretraining.
struct AugmentSpec {
  enum class Kind { zeroing, gaussian };
  Kind kind = Kind::zeroing;
  // zeroing: per-coordinate drop probability p in [0, 1);
  // gaussian: additive noise scale > 0.
  double param = 0.1;

  void validate() const;
  std::string to_string() const;
  static AugmentSpec parse(const std::string& s);  // "zeroing:0.1", "gaussian:1.0"
};

// Tuned grids reported for these augmentations.
inline const double kZeroingPresets[] = {0.1, 0.7};
inline const double kGaussianPresets[] = {1.0, 2.0};

Tensor augment(const Tensor& features, const AugmentSpec& spec, Rng& rng);

// Two independent augmentations of the same batch.
std::pair<Tensor, Tensor> make_positive_pair(const Tensor& features,
                                             const AugmentSpec& spec,
                                             Rng& rng);

// Optional per-feature standardization, fit on the pretraining set; applied
// before augmentation/encoding when configured.
struct Standardizer {
  std::vector<double> mean, std;
  static Standardizer fit(const Tensor& features);
  Tensor apply(const Tensor& features) const;
};

}  // namespace ltr
