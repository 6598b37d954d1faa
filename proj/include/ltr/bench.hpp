#pragma once

#include <map>
#include <string>
#include <vector>

#include "ltr/pretrain.hpp"

namespace ltr {

// Wall-clock scaling of the loss computations (forward + backward on given
// embeddings) across batch sizes, at fixed list size.
struct BenchConfig {
  std::vector<PretrainMethod> methods = {PretrainMethod::simclr,
                                         PretrainMethod::simclr_rank,
                                         PretrainMethod::simsiam};
  std::vector<int> batch_qgs = {8, 16, 32, 64};
  int list_size = 32;
  int dim = 32;
  int repeats = 5;
  double tau = 0.1;
  uint64_t seed = 1;
};

struct BenchRow {
  PretrainMethod method;
  int batch_qgs = 0;
  int items = 0;
  double seconds = 0.0;  // min over repeats
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  // Log-log slope of seconds vs batch_qgs per method.
  std::map<std::string, double> fitted_exponent;
  // t(simclr) / t(simclr_rank) at the largest batch, when both ran.
  double rank_speedup_at_max_b = 0.0;

  std::string to_csv() const;
};

BenchReport bench_losses(const BenchConfig& cfg);

}  // namespace ltr
