#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "styleproto/common.hpp"
#include "styleproto/model.hpp"

using namespace styleproto;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.model_dim = 16;
  cfg.n_heads = 2;
  cfg.ff_dim = 32;
  cfg.max_seq_len = 32;
  cfg.vocab_size = 20;
  cfg.n_styles = 3;
  return cfg;
}

bool rows_equal(const Mat& a, const Mat& b, int row) {
  return std::memcmp(a.row(row), b.row(row), sizeof(double) * a.cols) == 0;
}

}  // namespace

TEST_CASE("config validation rejects bad shapes") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = [&](auto&& tweak) {
    ModelConfig c = cfg;
    tweak(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  bad([](ModelConfig& c) { c.n_layers = 0; });
  bad([](ModelConfig& c) { c.model_dim = 0; });
  bad([](ModelConfig& c) { c.n_heads = 3; });  // 16 % 3 != 0
  bad([](ModelConfig& c) { c.ff_dim = 0; });
  bad([](ModelConfig& c) { c.max_seq_len = 4; });
  bad([](ModelConfig& c) { c.vocab_size = kNumSpecials - 1; });
  bad([](ModelConfig& c) { c.n_styles = 0; });
  bad([](ModelConfig& c) { c.dropout = 1.0; });
  bad([](ModelConfig& c) { c.dropout = -0.1; });
  bad([](ModelConfig& c) { c.init_std = -1.0; });
}

TEST_CASE("config json round trip and unknown-key rejection") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.25;
  cfg.init_std = 0.5;
  CHECK(model_config_from_json(model_config_to_json(cfg)) == cfg);

  // omitted keys keep their defaults
  ModelConfig sparse = model_config_from_json("{\"n_layers\": 5}");
  CHECK(sparse.n_layers == 5);
  CHECK(sparse.model_dim == ModelConfig{}.model_dim);

  CHECK_THROWS_WITH_AS(model_config_from_json("{\"n_layer\": 5}"),
                       "model config: unknown key 'n_layer'",
                       std::runtime_error);
}

TEST_CASE("init_model is seed-deterministic with documented structure") {
  ModelConfig cfg = tiny_config();
  ModelParams a = init_model(cfg, 7);
  ModelParams b = init_model(cfg, 7);
  CHECK(a == b);
  CHECK_FALSE(init_model(cfg, 8) == a);

  CHECK(a.tok_emb.rows == cfg.vocab_size);
  CHECK(a.tok_emb.cols == cfg.model_dim);
  CHECK(a.pos_emb.rows == cfg.max_seq_len);
  CHECK(a.seg_emb.rows == ModelConfig::kNumSegments);
  CHECK(a.style_emb.rows == cfg.n_styles);
  CHECK(a.layers.size() == static_cast<size_t>(cfg.n_layers));
  CHECK(a.layers[0].w_qkv.rows == cfg.model_dim);
  CHECK(a.layers[0].w_qkv.cols == 3 * cfg.model_dim);
  CHECK(a.layers[0].w_fc1.cols == cfg.ff_dim);

  for (double v : a.layers[0].b_qkv.a) CHECK(v == 0.0);
  for (double v : a.layers[1].b_fc2.a) CHECK(v == 0.0);
  for (double v : a.layers[0].ln1_g.a) CHECK(v == 1.0);
  for (double v : a.lnf_g.a) CHECK(v == 1.0);
  for (double v : a.lnf_b.a) CHECK(v == 0.0);
}

TEST_CASE("named_arrays walks every parameter exactly once") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_model(cfg, 1);
  auto arrays = p.named_arrays();
  // 4 embeddings + 12 per layer + 2 final-norm arrays
  CHECK(arrays.size() == 4 + 12 * static_cast<size_t>(cfg.n_layers) + 2);
  size_t total = 0;
  for (auto& [name, mat] : arrays) total += mat->count();
  size_t expect = 0;
  expect += p.tok_emb.count() + p.pos_emb.count() + p.seg_emb.count() +
            p.style_emb.count() + p.lnf_g.count() + p.lnf_b.count();
  for (auto& l : p.layers)
    expect += l.ln1_g.count() + l.ln1_b.count() + l.w_qkv.count() +
              l.b_qkv.count() + l.w_o.count() + l.b_o.count() +
              l.ln2_g.count() + l.ln2_b.count() + l.w_fc1.count() +
              l.b_fc1.count() + l.w_fc2.count() + l.b_fc2.count();
  CHECK(total == expect);

  p.zero_all();
  for (auto& [name, mat] : p.named_arrays())
    for (double v : mat->a) CHECK(v == 0.0);
}

TEST_CASE("quantize_f32 rounds through float precision") {
  Mat m;
  m.init(1, 3);
  m.a = {0.1, 1.0, 1e300};
  quantize_f32(m);
  CHECK(m.a[0] == static_cast<double>(0.1f));
  CHECK(m.a[1] == 1.0);
  CHECK(std::isinf(m.a[2]));  // saturates past float range
  Mat again = m;
  again.a[2] = 0.0;
  m.a[2] = 0.0;
  quantize_f32(m);  // idempotent on finite values
  CHECK(m == again);
}

TEST_CASE("assemble_input lays out tokens, segments and masks") {
  ModelConfig cfg = tiny_config();
  std::vector<int> q{6, 7, 8}, p{9, 10, 11, 12}, r{13, 14, 15, 16, 17};
  std::vector<uint8_t> sv{0, 1, 0, 0, 1};
  InputSeq in = assemble_input(q, p, r, 1, sv, cfg);

  const int n = 3, m = 4, t = 5;
  REQUIRE(in.length() == n + m + t + 4);
  CHECK(in.tokens.front() == kBos);
  CHECK(in.tokens[n + 1] == kBoundary);
  CHECK(in.tokens[n + m + 2] == kBoundary);
  CHECK(in.tokens.back() == kEos);
  CHECK(in.style == 1);

  // boundary tokens adopt the segment they introduce; EOS is R
  int cq = 0, cp = 0, cr = 0;
  for (int i = 0; i < in.length(); ++i) {
    if (in.segments[i] == kSegQ) ++cq;
    else if (in.segments[i] == kSegP) ++cp;
    else ++cr;
  }
  CHECK(cq == n + 1);
  CHECK(cp == m + 1);
  CHECK(cr == t + 2);
  CHECK(in.segments[0] == kSegQ);           // BOS introduces the query
  CHECK(in.segments[n + 1] == kSegP);       // first boundary
  CHECK(in.segments[n + m + 2] == kSegR);   // second boundary
  CHECK(in.segments.back() == kSegR);       // EOS

  // position i predicts tokens[i+1]
  for (int i = 0; i < in.length(); ++i) {
    bool rl = i >= n + m + 2 && i <= n + m + t + 2;
    bool ql = i >= 1 && i <= n - 1;
    CHECK(static_cast<bool>(in.response_loss[i]) == rl);
    CHECK(static_cast<bool>(in.query_loss[i]) == ql);
  }
  // sv flags sit on the positions predicting the flagged response tokens
  for (int j = 0; j < t; ++j)
    CHECK(in.sv_target[n + m + 2 + j] == sv[j]);
  CHECK(in.sv_target[n + m + t + 2] == 0);  // the EOS target is never stylistic

  SUBCASE("empty prototype still produces both boundaries") {
    InputSeq e = assemble_input(q, {}, r, 0, sv, cfg);
    CHECK(e.length() == n + t + 4);
    CHECK(e.tokens[n + 1] == kBoundary);
    CHECK(e.tokens[n + 2] == kBoundary);
    CHECK(e.segments[n + 1] == kSegP);
    CHECK(e.segments[n + 2] == kSegR);
  }
}

TEST_CASE("assemble_input rejects malformed requests") {
  ModelConfig cfg = tiny_config();
  std::vector<int> q{6, 7}, p{8}, r{9, 10};
  std::vector<uint8_t> sv{0, 0};
  CHECK_THROWS_AS(assemble_input(q, p, r, 0, {0}, cfg),
                  std::invalid_argument);  // sv misaligned
  CHECK_THROWS_AS(assemble_input(q, p, r, 3, sv, cfg),
                  std::invalid_argument);  // style id past n_styles
  CHECK_THROWS_AS(assemble_input(q, p, r, -2, sv, cfg),
                  std::invalid_argument);
  CHECK_NOTHROW(assemble_input(q, p, r, -1, sv, cfg));  // style-free warmup

  std::vector<int> long_r(cfg.max_seq_len, 6);
  std::vector<uint8_t> long_sv(long_r.size(), 0);
  CHECK_THROWS_AS(assemble_input(q, p, long_r, 0, long_sv, cfg),
                  std::invalid_argument);  // overflow
}

TEST_CASE("assemble_prefix ends on an R-segment boundary") {
  ModelConfig cfg = tiny_config();
  std::vector<int> q{6, 7}, p{8, 9};
  InputSeq pre = assemble_prefix(q, p, 2, cfg);
  REQUIRE(pre.length() == 7);
  CHECK(pre.tokens == std::vector<int>{kBos, 6, 7, kBoundary, 8, 9, kBoundary});
  CHECK(pre.segments ==
        std::vector<int>{kSegQ, kSegQ, kSegQ, kSegP, kSegP, kSegP, kSegR});
  for (int i = 0; i < pre.length(); ++i) {
    CHECK(pre.response_loss[i] == 0);
    CHECK(pre.query_loss[i] == 0);
  }

  std::vector<int> huge(cfg.max_seq_len, 6);
  CHECK_THROWS_AS(assemble_prefix(huge, p, 0, cfg), std::invalid_argument);
}

TEST_CASE("forward rows are log-normalized and deterministic") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;  // push the logits around so normalization is exercised
  ModelParams params = init_model(cfg, 11);
  InputSeq in = assemble_input({6, 7, 8}, {9, 10}, {11, 12, 13}, 0,
                               {1, 0, 0}, cfg);
  Mat lp = forward(params, in);
  REQUIRE(lp.rows == in.length());
  REQUIRE(lp.cols == cfg.vocab_size);
  for (int t = 0; t < lp.rows; ++t) {
    double sum = 0.0;
    for (int j = 0; j < lp.cols; ++j) {
      CHECK(lp.at(t, j) < 0.0);
      sum += std::exp(lp.at(t, j));
    }
    CHECK(std::abs(std::log(sum)) < 1e-9);
  }
  Mat lp2 = forward(params, in);
  CHECK(lp == lp2);
}

TEST_CASE("zero-init model predicts the uniform distribution") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.0;
  ModelParams params = init_model(cfg, 3);
  InputSeq in = assemble_input({6, 7, 8, 9}, {10}, {11, 12}, 1, {0, 0}, cfg);
  Mat lp = forward(params, in);
  const double uniform = -std::log(static_cast<double>(cfg.vocab_size));
  for (int t = 0; t < lp.rows; ++t)
    for (int j = 0; j < lp.cols; ++j) CHECK(lp.at(t, j) == uniform);

  // auxiliary LM loss over N-1 query predictions, each at log V
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) expect += std::log(static_cast<double>(cfg.vocab_size));
  CHECK(lm_aux_loss(lp, in) == expect);
}

TEST_CASE("forward is causal") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 5);
  InputSeq in = assemble_input({6, 7, 8}, {9, 10, 11}, {12, 13, 14}, 0,
                               {0, 0, 0}, cfg);
  Mat base = forward(params, in);

  const int flip = 10;  // a response-segment position
  InputSeq mod = in;
  mod.tokens[flip] = 17;
  Mat moved = forward(params, mod);
  for (int t = 0; t < flip; ++t) CHECK(rows_equal(base, moved, t));
  CHECK_FALSE(rows_equal(base, moved, flip));  // its own embedding changed
}

TEST_CASE("the style embedding only touches response positions") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 9);
  std::vector<int> q{6, 7}, p{8, 9}, r{10, 11};
  std::vector<uint8_t> sv{0, 0};
  Mat a = forward(params, assemble_input(q, p, r, 0, sv, cfg));
  Mat b = forward(params, assemble_input(q, p, r, 1, sv, cfg));
  const int first_r = 2 + 2 + 2;  // n + m + 2
  for (int t = 0; t < first_r; ++t) CHECK(rows_equal(a, b, t));
  CHECK_FALSE(rows_equal(a, b, first_r));
}

TEST_CASE("weighted_nll hand case and input checking") {
  CHECK(weighted_nll({-1.0, -2.0}, {0, 1}, 0.2) ==
        doctest::Approx(3.4).epsilon(1e-12));
  CHECK(weighted_nll({-1.0, -2.0}, {0, 0}, 0.7) == 3.0);
  CHECK(weighted_nll({}, {}, 0.3) == 0.0);
  CHECK_THROWS_AS(weighted_nll({-1.0}, {0, 1}, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(weighted_nll({-1.0}, {0}, -0.1), std::invalid_argument);
}

TEST_CASE("alpha zero reduces the style loss to plain NLL") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 13);
  InputSeq in = assemble_input({6, 7, 8}, {9}, {10, 11, 12}, 2, {1, 1, 0}, cfg);
  Mat lp = forward(params, in);

  double plain = 0.0;  // same accumulation order as the implementation
  for (int i = 0; i + 1 < in.length(); ++i)
    if (in.response_loss[i]) plain += -lp.at(i, in.tokens[i + 1]) * 1.0;
  CHECK(style_mle_loss(lp, in, 0.0) == plain);
  CHECK(style_mle_loss(lp, in, 0.3) > plain);  // flagged targets gain weight
}

TEST_CASE("beta zero removes the auxiliary term exactly") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 17);
  InputSeq in = assemble_input({6, 7, 8, 9}, {10}, {11, 12}, 0, {0, 1}, cfg);
  Mat lp = forward(params, in);
  LossBreakdown with = sequence_loss(lp, in, 0.2, 0.5);
  LossBreakdown without = sequence_loss(lp, in, 0.2, 0.0);
  CHECK(without.total == without.s_mle);
  CHECK(with.s_mle == without.s_mle);
  CHECK(with.lm == without.lm);
  CHECK(with.total == with.s_mle + 0.5 * with.lm);
}

TEST_CASE("stylistic weighting scales a position's whole gradient by 1+alpha") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 23);

  // hand-built sequence with exactly one prediction position so the scaling
  // is not diluted by the always-unweighted EOS target
  InputSeq in;
  in.tokens = {kBos, 6, 7, kBoundary, 8, kBoundary, 9, kEos};
  in.segments = {kSegQ, kSegQ, kSegQ, kSegP, kSegP, kSegR, kSegR, kSegR};
  in.style = 0;
  in.response_loss.assign(8, 0);
  in.query_loss.assign(8, 0);
  in.sv_target.assign(8, 0);
  in.response_loss[5] = 1;  // the boundary predicting the response token

  ModelParams g_plain = ModelParams::zeros(cfg);
  ModelParams g_wtd = ModelParams::zeros(cfg);
  Workspace ws;
  LossBreakdown plain = loss_and_grad(params, in, 0.2, 0.0, g_plain, ws);
  in.sv_target[5] = 1;
  LossBreakdown wtd = loss_and_grad(params, in, 0.2, 0.0, g_wtd, ws);

  CHECK(wtd.s_mle == 1.2 * plain.s_mle);  // single product, identical rounding
  auto pa = g_plain.named_arrays();
  auto wa = g_wtd.named_arrays();
  REQUIRE(pa.size() == wa.size());
  double worst = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].second->count() == wa[i].second->count());
    for (size_t j = 0; j < pa[i].second->count(); ++j) {
      double want = 1.2 * pa[i].second->a[j];
      double got = wa[i].second->a[j];
      double err = std::abs(got - want) / (1.0 + std::abs(want));
      if (err > worst) worst = err;
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("incremental decoding matches the batch forward bit for bit") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 29);
  std::vector<int> q{6, 7, 8}, p{9, 10};
  std::vector<int> r{11, 12, 13, 14};
  std::vector<uint8_t> sv(r.size(), 0);
  InputSeq full = assemble_input(q, p, r, 1, sv, cfg);
  Mat batch = forward(params, full);

  DecodeState st = start_decode(params, assemble_prefix(q, p, 1, cfg));
  int pos = static_cast<int>(q.size() + p.size()) + 2;  // the second boundary
  REQUIRE(st.last_logprobs.size() == static_cast<size_t>(cfg.vocab_size));
  CHECK(std::memcmp(st.last_logprobs.data(), batch.row(pos),
                    sizeof(double) * cfg.vocab_size) == 0);
  for (int y : r) {
    decode_append(params, st, y, kSegR);
    ++pos;
    CHECK(std::memcmp(st.last_logprobs.data(), batch.row(pos),
                      sizeof(double) * cfg.vocab_size) == 0);
  }
  decode_append(params, st, kEos, kSegR);
  CHECK(std::memcmp(st.last_logprobs.data(), batch.row(full.length() - 1),
                    sizeof(double) * cfg.vocab_size) == 0);
}

TEST_CASE("decode_append enforces the context budget") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.0;
  ModelParams params = init_model(cfg, 1);
  DecodeState st = start_decode(params, assemble_prefix({6}, {}, 0, cfg));
  int room = cfg.max_seq_len - static_cast<int>(st.tokens.size());
  for (int i = 0; i < room; ++i) CHECK_NOTHROW(decode_append(params, st, 7, kSegR));
  CHECK_THROWS_AS(decode_append(params, st, 7, kSegR), std::runtime_error);
  CHECK_THROWS_AS(([&] {
                    DecodeState s2 = start_decode(params, assemble_prefix({6}, {}, 0, cfg));
                    decode_append(params, s2, cfg.vocab_size, kSegR);
                  }()),
                  std::invalid_argument);
}

TEST_CASE("serial and parallel passes agree bit for bit") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  ModelParams params = init_model(cfg, 31);
  InputSeq in = assemble_input({6, 7, 8}, {9, 10, 11}, {12, 13, 14}, 2,
                               {1, 0, 1}, cfg);

  set_parallel_enabled(true);
  Mat lp_par = forward(params, in);
  ModelParams g_par = ModelParams::zeros(cfg);
  Workspace ws;
  LossBreakdown lb_par = loss_and_grad(params, in, 0.2, 0.5, g_par, ws);

  set_parallel_enabled(false);
  Mat lp_ser = forward(params, in);
  ModelParams g_ser = ModelParams::zeros(cfg);
  LossBreakdown lb_ser = loss_and_grad(params, in, 0.2, 0.5, g_ser, ws);
  set_parallel_enabled(true);

  CHECK(lp_par == lp_ser);
  CHECK(lb_par.total == lb_ser.total);
  CHECK(g_par == g_ser);

  for (int threads : {1, 3}) {
    set_thread_cap(threads);
    Mat lp_t = forward(params, in);
    CHECK(lp_par == lp_t);
  }
  set_thread_cap(0);
}

TEST_CASE("dropout draws are rng-driven and reproducible") {
  ModelConfig cfg = tiny_config();
  cfg.init_std = 0.5;
  cfg.dropout = 0.3;
  ModelParams params = init_model(cfg, 37);
  InputSeq in = assemble_input({6, 7}, {8}, {9, 10}, 0, {0, 0}, cfg);

  Workspace ws;
  Rng r1(99), r2(99), r3(100);
  Mat a = forward(params, in, ws, &r1);
  Mat b = forward(params, in, ws, &r2);
  CHECK(a == b);
  Mat c = forward(params, in, ws, &r3);
  CHECK_FALSE(a == c);

  // no rng → dropout off, same as a zero-dropout config
  Mat off = forward(params, in, ws);
  ModelConfig cfg0 = cfg;
  cfg0.dropout = 0.0;
  ModelParams p0 = params;
  p0.config = cfg0;
  CHECK(off == forward(p0, in));
}
