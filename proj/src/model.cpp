#include "styleproto/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "styleproto/kernels.hpp"

namespace styleproto {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
  if (model_dim < 1) throw std::invalid_argument("config: model_dim must be >= 1");
  if (n_heads < 1) throw std::invalid_argument("config: n_heads must be >= 1");
  if (model_dim % n_heads != 0)
    throw std::invalid_argument("config: model_dim must be divisible by n_heads");
  if (ff_dim < 1) throw std::invalid_argument("config: ff_dim must be >= 1");
  if (max_seq_len < 8)
    throw std::invalid_argument("config: max_seq_len must be >= 8");
  if (vocab_size < kNumSpecials)
    throw std::invalid_argument("config: vocab_size must cover the specials");
  if (n_styles < 1) throw std::invalid_argument("config: n_styles must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("config: dropout must be in [0,1)");
  if (!(init_std >= 0.0))
    throw std::invalid_argument("config: init_std must be >= 0");
}

std::string model_config_to_json(const ModelConfig& c) {
  json doc{{"n_layers", c.n_layers},       {"model_dim", c.model_dim},
           {"n_heads", c.n_heads},         {"ff_dim", c.ff_dim},
           {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
           {"n_styles", c.n_styles},       {"dropout", c.dropout},
           {"init_std", c.init_std}};
  return doc.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  json doc = json::parse(text);
  ModelConfig c;
  for (const auto& [key, value] : doc.items()) {
    if (key == "n_layers") c.n_layers = value.get<int>();
    else if (key == "model_dim") c.model_dim = value.get<int>();
    else if (key == "n_heads") c.n_heads = value.get<int>();
    else if (key == "ff_dim") c.ff_dim = value.get<int>();
    else if (key == "max_seq_len") c.max_seq_len = value.get<int>();
    else if (key == "vocab_size") c.vocab_size = value.get<int>();
    else if (key == "n_styles") c.n_styles = value.get<int>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "init_std") c.init_std = value.get<double>();
    else throw std::runtime_error("model config: unknown key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// parameters

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  const int d = config.model_dim, f = config.ff_dim;
  p.tok_emb.init(config.vocab_size, d);
  p.pos_emb.init(config.max_seq_len, d);
  p.seg_emb.init(ModelConfig::kNumSegments, d);
  p.style_emb.init(config.n_styles, d);
  p.layers.resize(config.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g.init(1, d);
    l.ln1_b.init(1, d);
    l.w_qkv.init(d, 3 * d);
    l.b_qkv.init(1, 3 * d);
    l.w_o.init(d, d);
    l.b_o.init(1, d);
    l.ln2_g.init(1, d);
    l.ln2_b.init(1, d);
    l.w_fc1.init(d, f);
    l.b_fc1.init(1, f);
    l.w_fc2.init(f, d);
    l.b_fc2.init(1, d);
  }
  p.lnf_g.init(1, d);
  p.lnf_b.init(1, d);
  return p;
}

namespace {

template <class Params, class MatT>
std::vector<std::pair<std::string, MatT*>> collect_arrays(Params& p) {
  std::vector<std::pair<std::string, MatT*>> out;
  out.push_back({"tok_emb", &p.tok_emb});
  out.push_back({"pos_emb", &p.pos_emb});
  out.push_back({"seg_emb", &p.seg_emb});
  out.push_back({"style_emb", &p.style_emb});
  for (size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    std::string pre = "layer" + std::to_string(i) + ".";
    out.push_back({pre + "ln1_g", &l.ln1_g});
    out.push_back({pre + "ln1_b", &l.ln1_b});
    out.push_back({pre + "w_qkv", &l.w_qkv});
    out.push_back({pre + "b_qkv", &l.b_qkv});
    out.push_back({pre + "w_o", &l.w_o});
    out.push_back({pre + "b_o", &l.b_o});
    out.push_back({pre + "ln2_g", &l.ln2_g});
    out.push_back({pre + "ln2_b", &l.ln2_b});
    out.push_back({pre + "w_fc1", &l.w_fc1});
    out.push_back({pre + "b_fc1", &l.b_fc1});
    out.push_back({pre + "w_fc2", &l.w_fc2});
    out.push_back({pre + "b_fc2", &l.b_fc2});
  }
  out.push_back({"lnf_g", &p.lnf_g});
  out.push_back({"lnf_b", &p.lnf_b});
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Mat*>> ModelParams::named_arrays() {
  return collect_arrays<ModelParams, Mat>(*this);
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::named_arrays()
    const {
  return collect_arrays<const ModelParams, const Mat>(*this);
}

void ModelParams::zero_all() {
  for (auto& [name, mat] : named_arrays()) mat->zero();
}

ModelParams init_model(const ModelConfig& config, uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(mix_seed(seed, "init"));
  auto fill_normal = [&rng, &config](Mat& m) {
    for (double& v : m.a) v = rng.normal() * config.init_std;
  };
  auto fill_ones = [](Mat& m) { std::fill(m.a.begin(), m.a.end(), 1.0); };
  fill_normal(p.tok_emb);
  fill_normal(p.pos_emb);
  fill_normal(p.seg_emb);
  fill_normal(p.style_emb);
  for (auto& l : p.layers) {
    fill_ones(l.ln1_g);
    fill_normal(l.w_qkv);
    fill_normal(l.w_o);
    fill_ones(l.ln2_g);
    fill_normal(l.w_fc1);
    fill_normal(l.w_fc2);
    // biases and LN shifts stay zero
  }
  fill_ones(p.lnf_g);
  return p;
}

void quantize_f32(Mat& m) {
  for (double& v : m.a) v = static_cast<double>(static_cast<float>(v));
}

void quantize_f32(ModelParams& params) {
  for (auto& [name, mat] : params.named_arrays()) quantize_f32(*mat);
}

// ---------------------------------------------------------------------------
// input assembly

InputSeq assemble_input(const std::vector<int>& query_ids,
                        const std::vector<int>& proto_ids,
                        const std::vector<int>& response_ids, StyleId style,
                        const std::vector<uint8_t>& response_sv,
                        const ModelConfig& config) {
  if (response_sv.size() != response_ids.size())
    throw std::invalid_argument("assemble_input: sv flags misaligned");
  const int n = static_cast<int>(query_ids.size());
  const int m = static_cast<int>(proto_ids.size());
  const int t = static_cast<int>(response_ids.size());
  const int len = n + m + t + 4;
  if (len > config.max_seq_len)
    throw std::invalid_argument("assemble_input: length " + std::to_string(len) +
                                " exceeds max_seq_len " +
                                std::to_string(config.max_seq_len));
  if (style < -1 || style >= config.n_styles)
    throw std::invalid_argument("assemble_input: style out of range");

  InputSeq in;
  in.style = style;
  in.tokens.reserve(len);
  in.tokens.push_back(kBos);
  in.tokens.insert(in.tokens.end(), query_ids.begin(), query_ids.end());
  in.tokens.push_back(kBoundary);
  in.tokens.insert(in.tokens.end(), proto_ids.begin(), proto_ids.end());
  in.tokens.push_back(kBoundary);
  in.tokens.insert(in.tokens.end(), response_ids.begin(), response_ids.end());
  in.tokens.push_back(kEos);

  // boundary tokens take the segment they introduce; EOS takes R
  in.segments.assign(len, kSegR);
  for (int i = 0; i <= n; ++i) in.segments[i] = kSegQ;
  for (int i = n + 1; i <= n + m + 1; ++i) in.segments[i] = kSegP;

  in.response_loss.assign(len, 0);
  in.query_loss.assign(len, 0);
  in.sv_target.assign(len, 0);
  // position i predicts tokens[i+1]
  for (int i = n + m + 2; i <= n + m + t + 2; ++i) in.response_loss[i] = 1;
  for (int i = 1; i <= n - 1; ++i) in.query_loss[i] = 1;
  for (int j = 0; j < t; ++j)
    if (response_sv[j]) in.sv_target[n + m + 2 + j] = 1;
  // the EOS target (position n+m+t+2) is never stylistic
  return in;
}

InputSeq assemble_prefix(const std::vector<int>& query_ids,
                         const std::vector<int>& proto_ids, StyleId style,
                         const ModelConfig& config) {
  const int n = static_cast<int>(query_ids.size());
  const int m = static_cast<int>(proto_ids.size());
  const int len = n + m + 3;
  if (len > config.max_seq_len - 1)
    throw std::invalid_argument(
        "assemble_prefix: context overflow (length " + std::to_string(len) +
        " leaves no room under max_seq_len " +
        std::to_string(config.max_seq_len) + ")");
  if (style < -1 || style >= config.n_styles)
    throw std::invalid_argument("assemble_prefix: style out of range");

  InputSeq in;
  in.style = style;
  in.tokens.reserve(len);
  in.tokens.push_back(kBos);
  in.tokens.insert(in.tokens.end(), query_ids.begin(), query_ids.end());
  in.tokens.push_back(kBoundary);
  in.tokens.insert(in.tokens.end(), proto_ids.begin(), proto_ids.end());
  in.tokens.push_back(kBoundary);

  in.segments.assign(len, kSegP);
  for (int i = 0; i <= n; ++i) in.segments[i] = kSegQ;
  in.segments[len - 1] = kSegR;  // the boundary that introduces the response

  in.response_loss.assign(len, 0);
  in.query_loss.assign(len, 0);
  in.sv_target.assign(len, 0);
  return in;
}

namespace {

void validate_input(const InputSeq& in, const ModelConfig& cfg) {
  const size_t len = in.tokens.size();
  if (len < 2) throw std::invalid_argument("input: too short");
  if (len > static_cast<size_t>(cfg.max_seq_len))
    throw std::invalid_argument("input: length exceeds max_seq_len");
  if (in.segments.size() != len || in.response_loss.size() != len ||
      in.query_loss.size() != len || in.sv_target.size() != len)
    throw std::invalid_argument("input: mask sizes misaligned");
  if (in.style < -1 || in.style >= cfg.n_styles)
    throw std::invalid_argument("input: style out of range");
  for (size_t i = 0; i < len; ++i) {
    if (in.tokens[i] < 0 || in.tokens[i] >= cfg.vocab_size)
      throw std::invalid_argument("input: token id out of range");
    if (in.segments[i] < 0 || in.segments[i] >= ModelConfig::kNumSegments)
      throw std::invalid_argument("input: segment id out of range");
    if ((in.response_loss[i] || in.query_loss[i]) && i + 1 >= len)
      throw std::invalid_argument("input: loss mask set on the final position");
  }
}

// -------------------------------------------------------------------------
// row-level numeric helpers, shared verbatim by the batch forward pass and
// the incremental decoder so the two are bit-identical

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / M_PI);
constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
  double x2 = x * x;
  double u = kGeluC * (x + kGeluA * x * x2);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  double x2 = x * x;
  double u = kGeluC * (x + kGeluA * x * x2);
  double th = std::tanh(u);
  double du = kGeluC * (1.0 + 3.0 * kGeluA * x2);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

void embed_row(const ModelParams& p, int token, int pos, int seg, int style,
               double* out) {
  const int d = p.config.model_dim;
  const double* te = p.tok_emb.row(token);
  const double* pe = p.pos_emb.row(pos);
  const double* se = p.seg_emb.row(seg);
  for (int j = 0; j < d; ++j) out[j] = te[j] + pe[j] + se[j];
  if (style >= 0 && seg == kSegR) {
    const double* st = p.style_emb.row(style);
    for (int j = 0; j < d; ++j) out[j] += st[j];
  }
}

void layernorm_row(const double* x, const double* g, const double* b, int d,
                   double* out, double* mean_out, double* rstd_out) {
  double mean = 0.0;
  for (int j = 0; j < d; ++j) mean += x[j];
  mean /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) {
    double c = x[j] - mean;
    var += c * c;
  }
  var /= d;
  double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int j = 0; j < d; ++j) out[j] = g[j] * ((x[j] - mean) * rstd) + b[j];
  *mean_out = mean;
  *rstd_out = rstd;
}

// Causal attention for one (head, position): scores over keys 0..t, softmax,
// context.  Keys/values are strided rows so the same code reads either the
// packed qkv buffer or the decode cache.
void attend_row(const double* q, const double* kbase, int64_t kstride,
                const double* vbase, int64_t vstride, int t, int hd,
                double inv_sqrt_hd, double* probs, double* ctx) {
  double maxs = -std::numeric_limits<double>::infinity();
  for (int u = 0; u <= t; ++u) {
    const double* k = kbase + u * kstride;
    double acc = 0.0;
    for (int j = 0; j < hd; ++j) acc += q[j] * k[j];
    double s = acc * inv_sqrt_hd;
    probs[u] = s;
    if (s > maxs) maxs = s;
  }
  double sum = 0.0;
  for (int u = 0; u <= t; ++u) {
    double e = std::exp(probs[u] - maxs);
    probs[u] = e;
    sum += e;
  }
  double inv = 1.0 / sum;
  for (int u = 0; u <= t; ++u) probs[u] *= inv;
  for (int j = 0; j < hd; ++j) ctx[j] = 0.0;
  for (int u = 0; u <= t; ++u) {
    double pu = probs[u];
    const double* v = vbase + u * vstride;
    for (int j = 0; j < hd; ++j) ctx[j] += pu * v[j];
  }
}

void log_softmax_row(double* z, int n) {
  double maxv = z[0];
  for (int j = 1; j < n; ++j)
    if (z[j] > maxv) maxv = z[j];
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(z[j] - maxv);
  double lse = maxv + std::log(sum);
  for (int j = 0; j < n; ++j) z[j] -= lse;
}

void add_bias_row(double* row, const double* b, int n) {
  for (int j = 0; j < n; ++j) row[j] += b[j];
}

void add_bias_rows(Mat& m, const Mat& b, bool par) {
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < m.rows; ++t) add_bias_row(m.row(t), b.row(0), m.cols);
}

bool row_finite(const double* row, int n) {
  for (int j = 0; j < n; ++j)
    if (!std::isfinite(row[j])) return false;
  return true;
}

void prepare_ws(Workspace& ws, const ModelConfig& cfg, int len, bool dropout) {
  const int d = cfg.model_dim, f = cfg.ff_dim;
  ws.L = len;
  ws.x0.resize(len, d);
  if (dropout) ws.drop_emb.resize(len, d);
  else ws.drop_emb = Mat{};
  ws.layers.resize(cfg.n_layers);
  for (auto& lw : ws.layers) {
    lw.ln1_out.resize(len, d);
    lw.ln1_mean.resize(len);
    lw.ln1_rstd.resize(len);
    lw.qkv.resize(len, 3 * d);
    lw.att_probs.resize(static_cast<size_t>(cfg.n_heads) * len * len);
    lw.att_ctx.resize(len, d);
    lw.att_out.resize(len, d);
    lw.x_att.resize(len, d);
    lw.ln2_out.resize(len, d);
    lw.ln2_mean.resize(len);
    lw.ln2_rstd.resize(len);
    lw.fc1_pre.resize(len, f);
    lw.fc1_act.resize(len, f);
    lw.mlp_out.resize(len, d);
    lw.x_mlp.resize(len, d);
    if (dropout) {
      lw.drop_att.resize(len, d);
      lw.drop_mlp.resize(len, d);
    } else {
      lw.drop_att = Mat{};
      lw.drop_mlp = Mat{};
    }
  }
  ws.lnf_out.resize(len, d);
  ws.lnf_mean.resize(len);
  ws.lnf_rstd.resize(len);
  ws.logprobs.resize(len, cfg.vocab_size);
}

// inverted-dropout multipliers, drawn serially so the stream is
// reproducible at any thread count
void draw_dropout(Mat& mask, double rate, Rng& rng) {
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.a) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
}

void apply_mask(Mat& m, const Mat& mask, bool par) {
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < m.rows; ++t) {
    double* row = m.row(t);
    const double* k = mask.row(t);
    for (int j = 0; j < m.cols; ++j) row[j] *= k[j];
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// forward

const Mat& forward(const ModelParams& p, const InputSeq& input, Workspace& ws,
                   Rng* dropout_rng) {
  const ModelConfig& cfg = p.config;
  validate_input(input, cfg);
  const int len = input.length(), d = cfg.model_dim, h = cfg.n_heads;
  const int f = cfg.ff_dim, v = cfg.vocab_size, hd = cfg.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool par = parallel_enabled();
  const bool drop = cfg.dropout > 0.0 && dropout_rng != nullptr;
  prepare_ws(ws, cfg, len, drop);

  if (drop) {
    draw_dropout(ws.drop_emb, cfg.dropout, *dropout_rng);
    for (auto& lw : ws.layers) {
      draw_dropout(lw.drop_att, cfg.dropout, *dropout_rng);
      draw_dropout(lw.drop_mlp, cfg.dropout, *dropout_rng);
    }
  }

#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t)
    embed_row(p, input.tokens[t], t, input.segments[t], input.style,
              ws.x0.row(t));
  if (drop) apply_mask(ws.x0, ws.drop_emb, par);

  const Mat* x_in = &ws.x0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = p.layers[l];
    Workspace::LayerWs& lw = ws.layers[l];

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t)
      layernorm_row(x_in->row(t), lp.ln1_g.row(0), lp.ln1_b.row(0), d,
                    lw.ln1_out.row(t), &lw.ln1_mean[t], &lw.ln1_rstd[t]);

    dispatch::matmul(lw.ln1_out.a.data(), lp.w_qkv.a.data(), lw.qkv.a.data(),
                     len, d, 3 * d);
    add_bias_rows(lw.qkv, lp.b_qkv, par);

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t) {
      for (int hh = 0; hh < h; ++hh) {
        attend_row(lw.qkv.row(t) + hh * hd, lw.qkv.row(0) + d + hh * hd,
                   3 * static_cast<int64_t>(d), lw.qkv.row(0) + 2 * d + hh * hd,
                   3 * static_cast<int64_t>(d), t, hd, inv_sqrt_hd,
                   lw.att_probs.data() +
                       (static_cast<size_t>(hh) * len + t) * len,
                   lw.att_ctx.row(t) + hh * hd);
      }
    }

    dispatch::matmul(lw.att_ctx.a.data(), lp.w_o.a.data(), lw.att_out.a.data(),
                     len, d, d);
    add_bias_rows(lw.att_out, lp.b_o, par);
    if (drop) apply_mask(lw.att_out, lw.drop_att, par);

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t) {
      const double* xi = x_in->row(t);
      const double* ao = lw.att_out.row(t);
      double* xa = lw.x_att.row(t);
      for (int j = 0; j < d; ++j) xa[j] = xi[j] + ao[j];
    }

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t)
      layernorm_row(lw.x_att.row(t), lp.ln2_g.row(0), lp.ln2_b.row(0), d,
                    lw.ln2_out.row(t), &lw.ln2_mean[t], &lw.ln2_rstd[t]);

    dispatch::matmul(lw.ln2_out.a.data(), lp.w_fc1.a.data(),
                     lw.fc1_pre.a.data(), len, d, f);
    add_bias_rows(lw.fc1_pre, lp.b_fc1, par);

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t) {
      const double* pre = lw.fc1_pre.row(t);
      double* act = lw.fc1_act.row(t);
      for (int j = 0; j < f; ++j) act[j] = gelu(pre[j]);
    }

    dispatch::matmul(lw.fc1_act.a.data(), lp.w_fc2.a.data(),
                     lw.mlp_out.a.data(), len, f, d);
    add_bias_rows(lw.mlp_out, lp.b_fc2, par);
    if (drop) apply_mask(lw.mlp_out, lw.drop_mlp, par);

#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < len; ++t) {
      const double* xa = lw.x_att.row(t);
      const double* mo = lw.mlp_out.row(t);
      double* xm = lw.x_mlp.row(t);
      for (int j = 0; j < d; ++j) xm[j] = xa[j] + mo[j];
    }

    x_in = &lw.x_mlp;
  }

#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t)
    layernorm_row(x_in->row(t), p.lnf_g.row(0), p.lnf_b.row(0), d,
                  ws.lnf_out.row(t), &ws.lnf_mean[t], &ws.lnf_rstd[t]);

  dispatch::matmul_nt(ws.lnf_out.a.data(), p.tok_emb.a.data(),
                      ws.logprobs.a.data(), len, d, v);

  int bad = 0;
#pragma omp parallel for schedule(static) if (par) reduction(| : bad)
  for (int t = 0; t < len; ++t) {
    log_softmax_row(ws.logprobs.row(t), v);
    if (!row_finite(ws.logprobs.row(t), v)) bad |= 1;
  }
  if (bad) throw std::runtime_error("forward: non-finite output");
  return ws.logprobs;
}

Mat forward(const ModelParams& p, const InputSeq& input) {
  Workspace ws;
  forward(p, input, ws);
  return std::move(ws.logprobs);
}

// ---------------------------------------------------------------------------
// losses

double weighted_nll(const std::vector<double>& target_logprobs,
                    const std::vector<uint8_t>& stylistic, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (stylistic.size() != target_logprobs.size())
    throw std::invalid_argument("weighted_nll: flag size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < target_logprobs.size(); ++i) {
    double w = stylistic[i] ? 1.0 + alpha : 1.0;
    total += -target_logprobs[i] * w;
  }
  return total;
}

double style_mle_loss(const Mat& logprobs, const InputSeq& input,
                      double alpha) {
  std::vector<double> lps;
  std::vector<uint8_t> sv;
  for (int i = 0; i + 1 < input.length(); ++i) {
    if (!input.response_loss[i]) continue;
    lps.push_back(logprobs.at(i, input.tokens[i + 1]));
    sv.push_back(input.sv_target[i]);
  }
  return weighted_nll(lps, sv, alpha);
}

double lm_aux_loss(const Mat& logprobs, const InputSeq& input) {
  double total = 0.0;
  for (int i = 0; i + 1 < input.length(); ++i)
    if (input.query_loss[i]) total += -logprobs.at(i, input.tokens[i + 1]);
  return total;
}

LossBreakdown sequence_loss(const Mat& logprobs, const InputSeq& input,
                            double alpha, double beta) {
  LossBreakdown lb;
  lb.s_mle = style_mle_loss(logprobs, input, alpha);
  lb.lm = lm_aux_loss(logprobs, input);
  lb.total = lb.s_mle + beta * lb.lm;
  return lb;
}

// ---------------------------------------------------------------------------
// backward

namespace {

// dx for one row given the stored mean/rstd of its LayerNorm
void ln_backward_dx(const double* x, double mean, double rstd, const double* g,
                    const double* dy, double* dx, int d) {
  double s1 = 0.0, s2 = 0.0;
  for (int j = 0; j < d; ++j) {
    double xh = (x[j] - mean) * rstd;
    double dxh = dy[j] * g[j];
    s1 += dxh;
    s2 += dxh * xh;
  }
  s1 /= d;
  s2 /= d;
  for (int j = 0; j < d; ++j) {
    double xh = (x[j] - mean) * rstd;
    double dxh = dy[j] * g[j];
    dx[j] = rstd * (dxh - s1 - xh * s2);
  }
}

// gain/shift gradients, accumulated serially in row order
void ln_backward_params(const Mat& x, const std::vector<double>& mean,
                        const std::vector<double>& rstd, const Mat& dy,
                        Mat& dg, Mat& db) {
  for (int t = 0; t < x.rows; ++t) {
    const double* xr = x.row(t);
    const double* dyr = dy.row(t);
    for (int j = 0; j < x.cols; ++j) {
      double xh = (xr[j] - mean[t]) * rstd[t];
      dg.a[j] += dyr[j] * xh;
      db.a[j] += dyr[j];
    }
  }
}

void colsum_add(const Mat& src, Mat& dst) {
  for (int t = 0; t < src.rows; ++t) {
    const double* row = src.row(t);
    for (int j = 0; j < src.cols; ++j) dst.a[j] += row[j];
  }
}

// backward through one block; d_x arrives as the gradient wrt the block's
// output and leaves as the gradient wrt its input
void layer_backward(const LayerParams& lp, const Workspace::LayerWs& lw,
                    const Mat& x_in, Mat& d_x, LayerParams& gl, int d, int h,
                    int f, int len, bool par) {
  const int hd = d / h;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat d_mlp;
  d_mlp.resize(len, d);
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    const double* dx = d_x.row(t);
    double* dm = d_mlp.row(t);
    if (lw.drop_mlp.count()) {
      const double* mask = lw.drop_mlp.row(t);
      for (int j = 0; j < d; ++j) dm[j] = dx[j] * mask[j];
    } else {
      for (int j = 0; j < d; ++j) dm[j] = dx[j];
    }
  }

  Mat d_fc1;
  d_fc1.resize(len, f);
  dispatch::matmul_nt(d_mlp.a.data(), lp.w_fc2.a.data(), d_fc1.a.data(), len,
                      d, f);
  dispatch::matmul_tn(lw.fc1_act.a.data(), d_mlp.a.data(), gl.w_fc2.a.data(),
                      len, f, d);
  colsum_add(d_mlp, gl.b_fc2);

#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    const double* pre = lw.fc1_pre.row(t);
    double* df = d_fc1.row(t);
    for (int j = 0; j < f; ++j) df[j] *= gelu_grad(pre[j]);
  }

  Mat d_ln2;
  d_ln2.resize(len, d);
  dispatch::matmul_nt(d_fc1.a.data(), lp.w_fc1.a.data(), d_ln2.a.data(), len,
                      f, d);
  dispatch::matmul_tn(lw.ln2_out.a.data(), d_fc1.a.data(), gl.w_fc1.a.data(),
                      len, d, f);
  colsum_add(d_fc1, gl.b_fc1);

  ln_backward_params(lw.x_att, lw.ln2_mean, lw.ln2_rstd, d_ln2, gl.ln2_g,
                     gl.ln2_b);
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    std::vector<double> dxr(d);
    ln_backward_dx(lw.x_att.row(t), lw.ln2_mean[t], lw.ln2_rstd[t],
                   lp.ln2_g.row(0), d_ln2.row(t), dxr.data(), d);
    double* dx = d_x.row(t);
    for (int j = 0; j < d; ++j) dx[j] += dxr[j];
  }
  // d_x now holds the gradient wrt x_att

  Mat d_attpre;
  d_attpre.resize(len, d);
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    const double* dx = d_x.row(t);
    double* da = d_attpre.row(t);
    if (lw.drop_att.count()) {
      const double* mask = lw.drop_att.row(t);
      for (int j = 0; j < d; ++j) da[j] = dx[j] * mask[j];
    } else {
      for (int j = 0; j < d; ++j) da[j] = dx[j];
    }
  }

  Mat d_ctx;
  d_ctx.resize(len, d);
  dispatch::matmul_nt(d_attpre.a.data(), lp.w_o.a.data(), d_ctx.a.data(), len,
                      d, d);
  dispatch::matmul_tn(lw.att_ctx.a.data(), d_attpre.a.data(), gl.w_o.a.data(),
                      len, d, d);
  colsum_add(d_attpre, gl.b_o);

  // attention core
  std::vector<double> d_scores(static_cast<size_t>(h) * len * len);
  Mat d_qkv;
  d_qkv.resize(len, 3 * d);

#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    std::vector<double> dp(t + 1);
    for (int hh = 0; hh < h; ++hh) {
      const double* dctx = d_ctx.row(t) + hh * hd;
      const double* probs =
          lw.att_probs.data() + (static_cast<size_t>(hh) * len + t) * len;
      double* ds = d_scores.data() + (static_cast<size_t>(hh) * len + t) * len;
      for (int u = 0; u <= t; ++u) {
        const double* vrow = lw.qkv.row(u) + 2 * d + hh * hd;
        double acc = 0.0;
        for (int j = 0; j < hd; ++j) acc += dctx[j] * vrow[j];
        dp[u] = acc;
      }
      double dot = 0.0;
      for (int u = 0; u <= t; ++u) dot += probs[u] * dp[u];
      for (int u = 0; u <= t; ++u) ds[u] = probs[u] * (dp[u] - dot);
    }
  }

#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    for (int hh = 0; hh < h; ++hh) {
      const double* ds =
          d_scores.data() + (static_cast<size_t>(hh) * len + t) * len;
      double* dq = d_qkv.row(t) + hh * hd;
      for (int j = 0; j < hd; ++j) dq[j] = 0.0;
      for (int u = 0; u <= t; ++u) {
        double coef = ds[u];
        const double* k = lw.qkv.row(u) + d + hh * hd;
        for (int j = 0; j < hd; ++j) dq[j] += coef * k[j];
      }
      for (int j = 0; j < hd; ++j) dq[j] *= inv_sqrt_hd;
    }
  }

#pragma omp parallel for schedule(static) if (par)
  for (int u = 0; u < len; ++u) {
    for (int hh = 0; hh < h; ++hh) {
      double* dk = d_qkv.row(u) + d + hh * hd;
      double* dv = d_qkv.row(u) + 2 * d + hh * hd;
      for (int j = 0; j < hd; ++j) dk[j] = 0.0;
      for (int j = 0; j < hd; ++j) dv[j] = 0.0;
      for (int t = u; t < len; ++t) {
        size_t base = (static_cast<size_t>(hh) * len + t) * len + u;
        double coef = d_scores[base];
        double pu = lw.att_probs[base];
        const double* q = lw.qkv.row(t) + hh * hd;
        const double* dctx = d_ctx.row(t) + hh * hd;
        for (int j = 0; j < hd; ++j) dk[j] += coef * q[j];
        for (int j = 0; j < hd; ++j) dv[j] += pu * dctx[j];
      }
      for (int j = 0; j < hd; ++j) dk[j] *= inv_sqrt_hd;
    }
  }

  Mat d_ln1;
  d_ln1.resize(len, d);
  dispatch::matmul_nt(d_qkv.a.data(), lp.w_qkv.a.data(), d_ln1.a.data(), len,
                      3 * d, d);
  dispatch::matmul_tn(lw.ln1_out.a.data(), d_qkv.a.data(), gl.w_qkv.a.data(),
                      len, d, 3 * d);
  colsum_add(d_qkv, gl.b_qkv);

  ln_backward_params(x_in, lw.ln1_mean, lw.ln1_rstd, d_ln1, gl.ln1_g,
                     gl.ln1_b);
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t) {
    std::vector<double> dxr(d);
    ln_backward_dx(x_in.row(t), lw.ln1_mean[t], lw.ln1_rstd[t], lp.ln1_g.row(0),
                   d_ln1.row(t), dxr.data(), d);
    double* dx = d_x.row(t);
    for (int j = 0; j < d; ++j) dx[j] += dxr[j];
  }
  // d_x now holds the gradient wrt the block input
}

}  // namespace

LossBreakdown loss_and_grad(const ModelParams& p, const InputSeq& input,
                            double alpha, double beta, ModelParams& grads,
                            Workspace& ws, Rng* dropout_rng) {
  const ModelConfig& cfg = p.config;
  if (!(grads.config == cfg))
    throw std::invalid_argument("loss_and_grad: grads shaped for another config");
  forward(p, input, ws, dropout_rng);
  LossBreakdown lb = sequence_loss(ws.logprobs, input, alpha, beta);

  const int len = input.length(), d = cfg.model_dim, v = cfg.vocab_size;
  const bool par = parallel_enabled();
  grads.zero_all();

  // per-position loss weights: response → 1 or 1+alpha, query → beta
  Mat d_logits;
  d_logits.resize(len, v);
  d_logits.zero();
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < len; ++i) {
    double w = 0.0;
    if (input.response_loss[i]) w = input.sv_target[i] ? 1.0 + alpha : 1.0;
    else if (input.query_loss[i]) w = beta;
    if (w == 0.0) continue;
    const double* lp = ws.logprobs.row(i);
    double* dz = d_logits.row(i);
    // each element is w × (softmax − one-hot), so reweighting a position
    // scales its whole contribution row by exactly w
    for (int j = 0; j < v; ++j) dz[j] = w * std::exp(lp[j]);
    int tgt = input.tokens[i + 1];
    dz[tgt] = w * (std::exp(lp[tgt]) - 1.0);
  }

  // tied output head
  Mat d_lnf;
  d_lnf.resize(len, d);
  dispatch::matmul(d_logits.a.data(), p.tok_emb.a.data(), d_lnf.a.data(), len,
                   v, d);
  dispatch::matmul_tn(d_logits.a.data(), ws.lnf_out.a.data(),
                      grads.tok_emb.a.data(), len, v, d);

  const Mat& x_last = ws.layers.back().x_mlp;
  ln_backward_params(x_last, ws.lnf_mean, ws.lnf_rstd, d_lnf, grads.lnf_g,
                     grads.lnf_b);
  Mat d_x;
  d_x.resize(len, d);
#pragma omp parallel for schedule(static) if (par)
  for (int t = 0; t < len; ++t)
    ln_backward_dx(x_last.row(t), ws.lnf_mean[t], ws.lnf_rstd[t],
                   p.lnf_g.row(0), d_lnf.row(t), d_x.row(t), d);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const Mat& x_in = (l == 0) ? ws.x0 : ws.layers[l - 1].x_mlp;
    layer_backward(p.layers[l], ws.layers[l], x_in, d_x, grads.layers[l], d,
                   cfg.n_heads, cfg.ff_dim, len, par);
  }

  if (ws.drop_emb.count()) apply_mask(d_x, ws.drop_emb, par);

  // embedding scatter, serial so repeated rows accumulate deterministically
  for (int t = 0; t < len; ++t) {
    const double* dx = d_x.row(t);
    double* dt = grads.tok_emb.row(input.tokens[t]);
    for (int j = 0; j < d; ++j) dt[j] += dx[j];
    double* dp = grads.pos_emb.row(t);
    for (int j = 0; j < d; ++j) dp[j] += dx[j];
    double* dsg = grads.seg_emb.row(input.segments[t]);
    for (int j = 0; j < d; ++j) dsg[j] += dx[j];
    if (input.style >= 0 && input.segments[t] == kSegR) {
      double* dst = grads.style_emb.row(input.style);
      for (int j = 0; j < d; ++j) dst[j] += dx[j];
    }
  }
  return lb;
}

// ---------------------------------------------------------------------------
// incremental decoding

namespace {

void decode_row(const ModelParams& p, DecodeState& st, int token,
                int segment) {
  const ModelConfig& cfg = p.config;
  const int t = static_cast<int>(st.tokens.size());
  if (t >= cfg.max_seq_len)
    throw std::runtime_error("decode: context overflow at max_seq_len");
  if (token < 0 || token >= cfg.vocab_size)
    throw std::invalid_argument("decode: token id out of range");
  if (segment < 0 || segment >= ModelConfig::kNumSegments)
    throw std::invalid_argument("decode: segment id out of range");
  st.tokens.push_back(token);
  st.segments.push_back(segment);

  const int d = cfg.model_dim, h = cfg.n_heads, f = cfg.ff_dim;
  const int v = cfg.vocab_size, hd = cfg.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(d), ln_row(d), qkv_row(3 * d), ctx(d), att(d);
  std::vector<double> fc1(f), mlp(d), probs(t + 1);
  double mean, rstd;

  embed_row(p, token, t, segment, st.style, x.data());

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = p.layers[l];
    Mat& kc = st.k_cache[l];
    Mat& vc = st.v_cache[l];

    layernorm_row(x.data(), lp.ln1_g.row(0), lp.ln1_b.row(0), d, ln_row.data(),
                  &mean, &rstd);
    kernels::matmul_row(ln_row.data(), lp.w_qkv.a.data(), qkv_row.data(), d,
                        3 * d);
    add_bias_row(qkv_row.data(), lp.b_qkv.row(0), 3 * d);

    kc.resize(t + 1, d);
    vc.resize(t + 1, d);
    std::copy(qkv_row.begin() + d, qkv_row.begin() + 2 * d, kc.row(t));
    std::copy(qkv_row.begin() + 2 * d, qkv_row.end(), vc.row(t));

    for (int hh = 0; hh < h; ++hh)
      attend_row(qkv_row.data() + hh * hd, kc.row(0) + hh * hd, d,
                 vc.row(0) + hh * hd, d, t, hd, inv_sqrt_hd, probs.data(),
                 ctx.data() + hh * hd);

    kernels::matmul_row(ctx.data(), lp.w_o.a.data(), att.data(), d, d);
    add_bias_row(att.data(), lp.b_o.row(0), d);
    for (int j = 0; j < d; ++j) x[j] = x[j] + att[j];

    layernorm_row(x.data(), lp.ln2_g.row(0), lp.ln2_b.row(0), d, ln_row.data(),
                  &mean, &rstd);
    kernels::matmul_row(ln_row.data(), lp.w_fc1.a.data(), fc1.data(), d, f);
    add_bias_row(fc1.data(), lp.b_fc1.row(0), f);
    for (int j = 0; j < f; ++j) fc1[j] = gelu(fc1[j]);
    kernels::matmul_row(fc1.data(), lp.w_fc2.a.data(), mlp.data(), f, d);
    add_bias_row(mlp.data(), lp.b_fc2.row(0), d);
    for (int j = 0; j < d; ++j) x[j] = x[j] + mlp[j];
  }

  layernorm_row(x.data(), p.lnf_g.row(0), p.lnf_b.row(0), d, ln_row.data(),
                &mean, &rstd);
  st.last_logprobs.resize(v);
  kernels::matmul_nt_row(ln_row.data(), p.tok_emb.a.data(),
                         st.last_logprobs.data(), d, v);
  log_softmax_row(st.last_logprobs.data(), v);
  if (!row_finite(st.last_logprobs.data(), v))
    throw std::runtime_error("decode: non-finite output");
}

}  // namespace

DecodeState start_decode(const ModelParams& p, const InputSeq& prefix) {
  validate_input(prefix, p.config);
  DecodeState st;
  st.style = prefix.style;
  st.k_cache.resize(p.config.n_layers);
  st.v_cache.resize(p.config.n_layers);
  for (size_t i = 0; i < prefix.tokens.size(); ++i)
    decode_row(p, st, prefix.tokens[i], prefix.segments[i]);
  return st;
}

void decode_append(const ModelParams& p, DecodeState& st, int token,
                   int segment) {
  decode_row(p, st, token, segment);
}

}  // namespace styleproto
