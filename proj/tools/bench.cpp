// Serial-vs-OpenMP benchmark for the hot paths: dense matmul, a full training
// step (batch loss + gradients), the retrieval scan, and corpus counting.
// Also asserts the two implementations agree bit for bit — the parallel
// kernels are only allowed to be faster, never different.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "styleproto/common.hpp"
#include "styleproto/corpus.hpp"
#include "styleproto/kernels.hpp"
#include "styleproto/lexicon.hpp"
#include "styleproto/model.hpp"
#include "styleproto/retrieval.hpp"
#include "styleproto/training.hpp"

namespace sp = styleproto;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms,
            bool identical) {
  std::printf("%-22s %10.2f ms %10.2f ms   x%-6.2f %s\n", name, serial_ms,
              parallel_ms, parallel_ms > 0 ? serial_ms / parallel_ms : 0.0,
              identical ? "identical" : "MISMATCH");
}

bool bench_matmul() {
  const int m = 384, k = 384, n = 384;
  std::vector<double> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n);
  sp::Rng rng(1);
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal();
  std::vector<double> c_serial(static_cast<size_t>(m) * n);
  std::vector<double> c_parallel(c_serial.size());

  double ts = time_ms(
      [&]() { sp::serial::matmul(a.data(), b.data(), c_serial.data(), m, k, n); },
      3);
  double tp = time_ms(
      [&]() { sp::kernels::matmul(a.data(), b.data(), c_parallel.data(), m, k, n); },
      3);
  bool same = std::memcmp(c_serial.data(), c_parallel.data(),
                          c_serial.size() * sizeof(double)) == 0;
  report("matmul 384^3", ts, tp, same);
  return same;
}

sp::Dataset bench_corpus(size_t pairs) {
  sp::SynthConfig cfg;
  cfg.n_pairs = pairs;
  cfg.styles = {"happy", "sad"};
  cfg.seed = 7;
  return sp::gen_synthetic(cfg);
}

bool bench_train_step() {
  sp::Dataset data = bench_corpus(64);
  sp::StyleCounts counts = sp::count_statistics(data);
  sp::StyleLexicon lex =
      sp::StyleLexicon::build(counts, sp::default_style_subset(data.styles), 0.75, 1);
  sp::Vocab vocab = sp::Vocab::build(data);

  sp::ModelConfig mc;
  mc.n_layers = 2;
  mc.model_dim = 128;
  mc.n_heads = 4;
  mc.ff_dim = 512;
  mc.max_seq_len = 128;
  mc.vocab_size = vocab.size();
  mc.n_styles = data.styles.size();
  sp::TrainConfig tc;
  tc.batch_size = 16;

  std::vector<size_t> idx(16);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto batch = sp::make_batch(data, idx, lex, vocab, mc, tc, 0);
  sp::ModelParams params = sp::init_model(mc, 3);
  sp::ModelParams grads_serial = sp::ModelParams::zeros(mc);
  sp::ModelParams grads_parallel = sp::ModelParams::zeros(mc);

  sp::set_parallel_enabled(false);
  double ts = time_ms(
      [&]() {
        sp::batch_loss_grad(params, batch, tc.alpha, tc.beta, grads_serial);
      },
      2);
  sp::set_parallel_enabled(true);
  double tp = time_ms(
      [&]() {
        sp::batch_loss_grad(params, batch, tc.alpha, tc.beta, grads_parallel);
      },
      2);
  bool same = grads_serial == grads_parallel;
  report("train step b=16", ts, tp, same);
  return same;
}

bool bench_retrieval() {
  sp::Dataset data = bench_corpus(2000);
  sp::RetrievalIndex index = sp::RetrievalIndex::build(data);
  const auto& query = data.pairs[123].query;

  std::vector<sp::RetrievalHit> hs, hp;
  double ts = time_ms(
      [&]() {
        for (int i = 0; i < 50; ++i) hs = index.retrieve_serial(query, 10);
      },
      3);
  double tp = time_ms(
      [&]() {
        for (int i = 0; i < 50; ++i) hp = index.retrieve(query, 10);
      },
      3);
  bool same = hs.size() == hp.size();
  for (size_t i = 0; same && i < hs.size(); ++i)
    same = hs[i].corpus_index == hp[i].corpus_index && hs[i].score == hp[i].score;
  report("retrieve x50", ts, tp, same);
  return same;
}

bool bench_counts() {
  sp::Dataset data = bench_corpus(20000);
  sp::StyleCounts cs, cp;
  double ts = time_ms([&]() { cs = sp::count_statistics_serial(data); }, 3);
  double tp = time_ms([&]() { cp = sp::count_statistics(data); }, 3);
  bool same = cs.words == cp.words && cs.count_ws == cp.count_ws &&
              cs.count_w == cp.count_w && cs.count_s == cp.count_s &&
              cs.total == cp.total;
  report("count 20k pairs", ts, tp, same);
  return same;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--threads" && i + 1 < argc)
      threads = std::atoi(argv[++i]);
  }
  if (threads > 0) sp::set_thread_cap(threads);

  std::printf("%-22s %13s %13s   %-7s %s\n", "benchmark", "serial", "parallel",
              "speedup", "check");
  bool ok = true;
  ok &= bench_matmul();
  ok &= bench_train_step();
  ok &= bench_retrieval();
  ok &= bench_counts();
  if (!ok) {
    std::fprintf(stderr, "serial/parallel mismatch\n");
    return 1;
  }
  return 0;
}
