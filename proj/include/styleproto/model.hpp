#pragma once

// Decoder-only transformer with token/position/segment/style embeddings,
// style-weighted MLE + auxiliary query-LM losses, exact analytic gradients,
// and an incremental (KV-cached) decoding path that is bit-identical to the
// batch forward pass.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "styleproto/common.hpp"
#include "styleproto/corpus.hpp"

namespace styleproto {

struct ModelConfig {
  int n_layers = 2;
  int model_dim = 64;
  int n_heads = 4;
  int ff_dim = 256;
  int max_seq_len = 128;
  int vocab_size = 0;  // set from the vocabulary at model-build time
  int n_styles = 0;
  double dropout = 0.0;
  double init_std = 0.02;
  static constexpr int kNumSegments = 3;

  int head_dim() const { return model_dim / n_heads; }
  void validate() const;  // throws std::invalid_argument
  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// Flat row-major matrix; vectors are 1×n.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  void init(int r, int c) {
    rows = r;
    cols = c;
    a.assign(static_cast<size_t>(r) * c, 0.0);
  }
  void resize(int r, int c) {
    rows = r;
    cols = c;
    a.resize(static_cast<size_t>(r) * c);
  }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
  double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const {
    return a.data() + static_cast<size_t>(r) * cols;
  }
  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return a[static_cast<size_t>(r) * cols + c];
  }
  size_t count() const { return a.size(); }
  bool operator==(const Mat&) const = default;
};

struct LayerParams {
  Mat ln1_g, ln1_b;    // [1×D]
  Mat w_qkv, b_qkv;    // [D×3D], [1×3D]; columns = q | k | v, head-major
  Mat w_o, b_o;        // [D×D], [1×D]
  Mat ln2_g, ln2_b;    // [1×D]
  Mat w_fc1, b_fc1;    // [D×F], [1×F]
  Mat w_fc2, b_fc2;    // [F×D], [1×D]
  bool operator==(const LayerParams&) const = default;
};

struct ModelParams {
  ModelConfig config;
  Mat tok_emb;    // [V×D]; also the tied output projection
  Mat pos_emb;    // [max_seq_len×D]
  Mat seg_emb;    // [3×D]: Q, P, R
  Mat style_emb;  // [n_styles×D]
  std::vector<LayerParams> layers;
  Mat lnf_g, lnf_b;  // [1×D]

  static ModelParams zeros(const ModelConfig& config);
  // Fixed traversal order shared by the optimizer, checkpoints, and the
  // gradient checker.
  std::vector<std::pair<std::string, Mat*>> named_arrays();
  std::vector<std::pair<std::string, const Mat*>> named_arrays() const;
  void zero_all();
  bool operator==(const ModelParams&) const = default;
};

// Weights ~ Normal(0, init_std²), biases zero, normalization gains one.
ModelParams init_model(const ModelConfig& config, uint64_t seed);

// Rounds every value to the nearest float32; applied at checkpoint
// boundaries so a resumed run continues from exactly the stored state.
void quantize_f32(Mat& m);
void quantize_f32(ModelParams& params);

enum Segment : int { kSegQ = 0, kSegP = 1, kSegR = 2 };

// Layout: [BOS] query [B] prototype [B] response [EOS].  Boundary tokens
// take the segment of the part they introduce; EOS takes R.  Position i
// predicts tokens[i+1]; the masks below flag prediction positions.
struct InputSeq {
  std::vector<int> tokens;
  std::vector<int> segments;
  int style = 0;  // -1: no style embedding added (plain-LM warmup)
  std::vector<uint8_t> response_loss;  // predicts y_1..y_T and EOS
  std::vector<uint8_t> query_loss;     // predicts x_2..x_N
  std::vector<uint8_t> sv_target;      // target is a stylistic word

  int length() const { return static_cast<int>(tokens.size()); }
};

// response_sv[i] flags response_ids[i] as stylistic (the EOS target is
// never stylistic).  Throws when the assembled length exceeds max_seq_len.
InputSeq assemble_input(const std::vector<int>& query_ids,
                        const std::vector<int>& proto_ids,
                        const std::vector<int>& response_ids, StyleId style,
                        const std::vector<uint8_t>& response_sv,
                        const ModelConfig& config);

// [BOS] query [B] prototype [B] — the generation-time context; the trailing
// [B] already carries segment R (and the style embedding).
InputSeq assemble_prefix(const std::vector<int>& query_ids,
                         const std::vector<int>& proto_ids, StyleId style,
                         const ModelConfig& config);

struct Workspace {
  struct LayerWs {
    Mat ln1_out;                         // [L×D]
    std::vector<double> ln1_mean, ln1_rstd;
    Mat qkv;                             // [L×3D]
    std::vector<double> att_probs;       // [H][L][L] row-major
    Mat att_ctx;                         // [L×D] heads concatenated
    Mat att_out;                         // [L×D] after w_o
    Mat x_att;                           // [L×D] residual after attention
    Mat ln2_out;                         // [L×D]
    std::vector<double> ln2_mean, ln2_rstd;
    Mat fc1_pre;                         // [L×F]
    Mat fc1_act;                         // [L×F] after GELU
    Mat mlp_out;                         // [L×D]
    Mat x_mlp;                           // [L×D] residual after MLP
    Mat drop_att, drop_mlp;              // dropout multipliers, empty when off
  };
  int L = 0;
  Mat x0;  // embedding sums [L×D]
  Mat drop_emb;
  std::vector<LayerWs> layers;
  Mat lnf_out;  // [L×D]
  std::vector<double> lnf_mean, lnf_rstd;
  Mat logprobs;  // [L×V], rows log-normalized
};

// Causal forward pass; fills ws and returns ws.logprobs.  When
// config.dropout > 0 and dropout_rng is given, inverted-dropout masks are
// drawn and applied (training only; inference passes no rng).
const Mat& forward(const ModelParams& params, const InputSeq& input,
                   Workspace& ws, Rng* dropout_rng = nullptr);
Mat forward(const ModelParams& params, const InputSeq& input);

// Core of L_S-MLE: sum of -logprob × (1+alpha if stylistic else 1).
double weighted_nll(const std::vector<double>& target_logprobs,
                    const std::vector<uint8_t>& stylistic, double alpha);
// Sum over response prediction positions of the weighted NLL.
double style_mle_loss(const Mat& logprobs, const InputSeq& input,
                      double alpha);
// Sum over query prediction positions (x_2..x_N) of plain NLL.
double lm_aux_loss(const Mat& logprobs, const InputSeq& input);

struct LossBreakdown {
  double s_mle = 0.0;
  double lm = 0.0;
  double total = 0.0;
};

LossBreakdown sequence_loss(const Mat& logprobs, const InputSeq& input,
                            double alpha, double beta);

// Forward + full analytic backward; grads must be shaped like params and is
// overwritten.  Returns the loss breakdown of this example.
LossBreakdown loss_and_grad(const ModelParams& params, const InputSeq& input,
                            double alpha, double beta, ModelParams& grads,
                            Workspace& ws, Rng* dropout_rng = nullptr);

// Incremental decoding with per-layer KV caches.  Appending tokens one at a
// time yields logit rows bit-identical to a batch forward over the grown
// sequence (the row-level kernels are shared).
struct DecodeState {
  std::vector<int> tokens;
  std::vector<int> segments;
  int style = 0;
  std::vector<Mat> k_cache, v_cache;     // per layer, [len×D]
  std::vector<double> last_logprobs;     // [V] prediction row for the next token
};

DecodeState start_decode(const ModelParams& params, const InputSeq& prefix);
// Appends one token (caller supplies its segment id) and refreshes
// last_logprobs.  Throws when max_seq_len would be exceeded.
void decode_append(const ModelParams& params, DecodeState& state, int token,
                   int segment);

}  // namespace styleproto
