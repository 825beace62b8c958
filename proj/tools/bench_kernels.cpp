// Times the serial reference kernels against their OpenMP versions and checks
// that both produce identical results. Thread count follows OMP_NUM_THREADS.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "rdg/kernels.hpp"
#include "rdg/random.hpp"
#include "rdg/seq_net.hpp"
#include "rdg/trainer.hpp"

using namespace rdg;

namespace {

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s < best) best = s;
  }
  return best;
}

void row(const char* name, double serial_s, double omp_s, bool same) {
  std::printf("%-34s %12.3f %12.3f %8.2fx  %s\n", name, serial_s * 1e3, omp_s * 1e3,
              serial_s / omp_s, same ? "identical" : "MISMATCH");
}

void bench_dense(std::size_t rows, std::size_t cols, int reps) {
  Rng rng(rows * 31 + cols);
  std::vector<double> W(rows * cols), x(cols), xr(rows);
  for (auto* v : {&W, &x, &xr})
    for (auto& e : *v) e = rng.normal();
  char label[64];

  std::vector<double> y1(rows), y2(rows);
  const double a = best_of(reps, [&] { kernels::serial::gemv(W, rows, cols, x, y1); });
  const double b = best_of(reps, [&] { kernels::omp::gemv(W, rows, cols, x, y2); });
  std::snprintf(label, sizeof label, "gemv %zux%zu", rows, cols);
  row(label, a, b, y1 == y2);

  std::vector<double> z1(cols), z2(cols);
  const double c = best_of(reps, [&] { kernels::serial::gemv_transposed(W, rows, cols, xr, z1); });
  const double d = best_of(reps, [&] { kernels::omp::gemv_transposed(W, rows, cols, xr, z2); });
  std::snprintf(label, sizeof label, "gemv_transposed %zux%zu", rows, cols);
  row(label, c, d, z1 == z2);

  auto W1 = W, W2 = W;
  const double e = best_of(reps, [&] { kernels::serial::rank1_update(W1, rows, cols, xr, x, 1e-6); });
  const double f = best_of(reps, [&] { kernels::omp::rank1_update(W2, rows, cols, xr, x, 1e-6); });
  std::snprintf(label, sizeof label, "rank1_update %zux%zu", rows, cols);
  row(label, e, f, W1 == W2);
}

void bench_batch(std::size_t vocab, std::size_t hidden, std::size_t batch_size, int reps) {
  Seq2SeqHyper h;
  h.vocab_size = vocab;
  h.emb_size = hidden / 2;
  h.hidden_size = hidden;
  h.max_len = 12;
  const auto params = init_params(h, 1);
  Rng rng(9);
  std::vector<DialoguePair> batch(batch_size);
  for (auto& p : batch)
    for (auto* u : {&p.input, &p.output}) {
      const std::size_t len = 1 + rng.index(h.max_len);
      for (std::size_t i = 0; i < len; ++i) u->push_back(static_cast<TokenId>(ids::reserved + rng.index(vocab - ids::reserved)));
    }

  BatchLoss s, o;
  const double a = best_of(reps, [&] { s = serial::nll_gradient(params, batch, 0.1, 3); });
  const double b = best_of(reps, [&] { o = omp::nll_gradient(params, batch, 0.1, 3); });
  bool same = s.loss == o.loss;
  for (std::size_t i = 0; i < s.gradient.tensors.size(); ++i)
    same = same && s.gradient.tensors[i] == o.gradient.tensors[i];
  char label[64];
  std::snprintf(label, sizeof label, "nll_gradient V=%zu H=%zu B=%zu", vocab, hidden, batch_size);
  row(label, a, b, same);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-34s %12s %12s %9s\n", "kernel", "serial ms", "omp ms", "speedup");
  bench_dense(300, 64, 200);
  bench_dense(1024, 1024, 20);
  bench_dense(4096, 1024, 5);
  bench_batch(300, 64, 16, 5);
  bench_batch(2000, 128, 32, 3);
  return 0;
}
