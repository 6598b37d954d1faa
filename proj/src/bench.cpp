#include "ltr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace ltr {

namespace {

Tensor random_embeddings(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void one_pass(PretrainMethod method, const Tensor& z0, const Tensor& z1,
              const std::vector<QgSpan>& spans, double tau,
              uint64_t perm_seed) {
  Tape tape;
  Var a = leaf(tape, z0, true);
  Var b = leaf(tape, z1, true);
  Var loss{nullptr, -1};
  switch (method) {
    case PretrainMethod::simclr:
      loss = simclr_loss(tape, a, b, tau);
      break;
    case PretrainMethod::simclr_rank:
      loss = simclr_rank_loss(tape, a, b, spans, tau);
      break;
    case PretrainMethod::simclr_sample: {
      Rng rng(perm_seed);
      loss = simclr_sample_loss(tape, a, b, spans[0].len, rng, tau);
      break;
    }
    case PretrainMethod::simsiam: {
      Var p0 = leaf(tape, z1, true);
      Var p1 = leaf(tape, z0, true);
      loss = simsiam_loss(tape, p0, p1, a, b);
      break;
    }
  }
  tape.backward(loss.id);
}

// Seconds per pass, with enough passes per timed region that timer and
// allocator jitter cannot distort the small batch sizes.
double timed_pass_seconds(PretrainMethod method, const Tensor& z0,
                          const Tensor& z1, const std::vector<QgSpan>& spans,
                          double tau, uint64_t perm_seed, int repeats) {
  one_pass(method, z0, z1, spans, tau, perm_seed);  // warmup
  auto t0 = std::chrono::steady_clock::now();
  one_pass(method, z0, z1, spans, tau, perm_seed);
  double estimate = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  constexpr double kMinRegionSeconds = 0.1;
  int iters = 1;
  if (estimate < kMinRegionSeconds)
    iters = std::min(200, static_cast<int>(kMinRegionSeconds /
                                           std::max(estimate, 1e-7)) +
                              1);
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < repeats; ++r) {
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i)
      one_pass(method, z0, z1, spans, tau, perm_seed + r);
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count() /
                  iters;
    best = std::min(best, secs);
  }
  return best;
}

}  // namespace

BenchReport bench_losses(const BenchConfig& cfg) {
  if (cfg.batch_qgs.empty() || cfg.methods.empty())
    fail(ErrorCode::InvalidConfig, "bench: nothing to measure");
  if (cfg.repeats < 1 || cfg.list_size < 1 || cfg.dim < 1)
    fail(ErrorCode::InvalidConfig, "bench: bad repeats/list_size/dim");
#ifdef __GLIBC__
  // Keep large tensor blocks on the heap across passes. Without this, sizes
  // past the default 128 KB mmap threshold pay an mmap/munmap round trip per
  // allocation, which puts a step change in the middle of the scaling curve.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
#endif
  BenchReport report;
  report.config = cfg;
  Rng rng(cfg.seed);

  for (PretrainMethod method : cfg.methods) {
    std::vector<double> log_b, log_t;
    for (int b : cfg.batch_qgs) {
      const int items = b * cfg.list_size;
      Tensor z0 = random_embeddings(items, cfg.dim, rng);
      Tensor z1 = random_embeddings(items, cfg.dim, rng);
      std::vector<QgSpan> spans;
      for (int q = 0; q < b; ++q) spans.push_back({q * cfg.list_size,
                                                   cfg.list_size});
      double best = timed_pass_seconds(method, z0, z1, spans, cfg.tau,
                                       cfg.seed, cfg.repeats);
      report.rows.push_back({method, b, items, best});
      log_b.push_back(std::log(static_cast<double>(b)));
      log_t.push_back(std::log(std::max(best, 1e-9)));
    }
    // Least-squares slope of log t on log B.
    const size_t n = log_b.size();
    double mb = 0.0, mt = 0.0;
    for (size_t i = 0; i < n; ++i) {
      mb += log_b[i];
      mt += log_t[i];
    }
    mb /= n;
    mt /= n;
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
      num += (log_b[i] - mb) * (log_t[i] - mt);
      den += (log_b[i] - mb) * (log_b[i] - mb);
    }
    report.fitted_exponent[pretrain_method_name(method)] =
        den > 0.0 ? num / den : 0.0;
  }

  int max_b = *std::max_element(cfg.batch_qgs.begin(), cfg.batch_qgs.end());
  double t_simclr = 0.0, t_rank = 0.0;
  for (const BenchRow& r : report.rows) {
    if (r.batch_qgs != max_b) continue;
    if (r.method == PretrainMethod::simclr) t_simclr = r.seconds;
    if (r.method == PretrainMethod::simclr_rank) t_rank = r.seconds;
  }
  if (t_simclr > 0.0 && t_rank > 0.0)
    report.rank_speedup_at_max_b = t_simclr / t_rank;
  return report;
}

std::string BenchReport::to_csv() const {
  std::ostringstream out;
  out << "method,batch_qgs,items,seconds\n";
  for (const BenchRow& r : rows)
    out << pretrain_method_name(r.method) << ',' << r.batch_qgs << ','
        << r.items << ',' << r.seconds << '\n';
  return out.str();
}

}  // namespace ltr
