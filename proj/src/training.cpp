#include "styleproto/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "styleproto/prototype.hpp"

namespace styleproto {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
  if (lr < 0.0) throw std::invalid_argument("train config: lr must be >= 0");
  if (batch_size < 1)
    throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("train config: adam betas must be in [0,1)");
  if (!(adam_eps > 0.0))
    throw std::invalid_argument("train config: adam_eps must be > 0");
  if (alpha < 0.0) throw std::invalid_argument("train config: alpha must be >= 0");
  if (beta < 0.0) throw std::invalid_argument("train config: beta must be >= 0");
  if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0))
    throw std::invalid_argument("train config: corruption_rate must be in [0,1]");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
    throw std::invalid_argument("train config: mask_prob must be in [0,1]");
  if (grad_clip < 0.0)
    throw std::invalid_argument("train config: grad_clip must be >= 0");
  if (warmup_epochs < 0)
    throw std::invalid_argument("train config: warmup_epochs must be >= 0");
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;  // defaults are the documented regime
  if (name == "default") return c;
  if (name == "desk") {
    c.lr = 3e-4;
    c.batch_size = 8;
    c.epochs = 1000;  // effectively until-overfit; cap with max_steps
    return c;
  }
  throw std::invalid_argument("unknown training preset '" + name + "'");
}

namespace {

json train_config_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"corruption_rate", c.corruption_rate},
              {"mask_prob", c.mask_prob},
              {"grad_clip", c.grad_clip},
              {"max_steps", c.max_steps},
              {"warmup_epochs", c.warmup_epochs},
              {"style_specific_weighting", c.style_specific_weighting}};
}

// returns true when the key belongs to TrainConfig
bool apply_train_key(TrainConfig& c, const std::string& key, const json& v) {
  if (key == "lr") c.lr = v.get<double>();
  else if (key == "batch_size") c.batch_size = v.get<int>();
  else if (key == "epochs") c.epochs = v.get<int>();
  else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
  else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
  else if (key == "adam_eps") c.adam_eps = v.get<double>();
  else if (key == "seed") c.seed = v.get<uint64_t>();
  else if (key == "alpha") c.alpha = v.get<double>();
  else if (key == "beta") c.beta = v.get<double>();
  else if (key == "corruption_rate") c.corruption_rate = v.get<double>();
  else if (key == "mask_prob") c.mask_prob = v.get<double>();
  else if (key == "grad_clip") c.grad_clip = v.get<double>();
  else if (key == "max_steps") c.max_steps = v.get<uint64_t>();
  else if (key == "warmup_epochs") c.warmup_epochs = v.get<int>();
  else if (key == "style_specific_weighting") c.style_specific_weighting = v.get<bool>();
  else return false;
  return true;
}

bool apply_model_key(ModelConfig& c, const std::string& key, const json& v) {
  if (key == "n_layers") c.n_layers = v.get<int>();
  else if (key == "model_dim") c.model_dim = v.get<int>();
  else if (key == "n_heads") c.n_heads = v.get<int>();
  else if (key == "ff_dim") c.ff_dim = v.get<int>();
  else if (key == "max_seq_len") c.max_seq_len = v.get<int>();
  else if (key == "vocab_size") c.vocab_size = v.get<int>();
  else if (key == "n_styles") c.n_styles = v.get<int>();
  else if (key == "dropout") c.dropout = v.get<double>();
  else if (key == "init_std") c.init_std = v.get<double>();
  else return false;
  return true;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  return train_config_json(c).dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json doc = json::parse(text);
  TrainConfig c;
  for (const auto& [key, value] : doc.items())
    if (!apply_train_key(c, key, value))
      throw std::runtime_error("train config: unknown key '" + key + "'");
  return c;
}

std::pair<ModelConfig, TrainConfig> combined_config_from_json(
    const std::string& text) {
  json doc = json::parse(text);
  ModelConfig mc;
  TrainConfig tc;
  for (const auto& [key, value] : doc.items())
    if (!apply_model_key(mc, key, value) && !apply_train_key(tc, key, value))
      throw std::runtime_error("config: unknown key '" + key + "'");
  return {mc, tc};
}

std::string combined_config_to_json(const ModelConfig& mc,
                                    const TrainConfig& tc) {
  json doc = json::parse(model_config_to_json(mc));
  doc.update(train_config_json(tc));
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// optimizer

AdamState AdamState::zeros(const ModelConfig& config) {
  ModelParams shape = ModelParams::zeros(config);
  AdamState st;
  for (auto& [name, mat] : shape.named_arrays()) {
    Mat z;
    z.init(mat->rows, mat->cols);
    st.m.push_back(z);
    st.v.push_back(std::move(z));
  }
  return st;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg) {
  auto ps = params.named_arrays();
  auto gs = grads.named_arrays();
  if (ps.size() != gs.size() || state.m.size() != ps.size() ||
      state.v.size() != ps.size())
    throw std::invalid_argument("adam_step: array layout mismatch");

  for (size_t a = 0; a < gs.size(); ++a) {
    const Mat& g = *gs[a].second;
    if (g.count() != ps[a].second->count() ||
        g.count() != state.m[a].count() || g.count() != state.v[a].count())
      throw std::invalid_argument("adam_step: shape mismatch in " +
                                  ps[a].first);
    for (double x : g.a)
      if (!std::isfinite(x))
        throw std::runtime_error("adam_step: non-finite gradient in " +
                                 gs[a].first);
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  const bool par = parallel_enabled();

  for (size_t a = 0; a < ps.size(); ++a) {
    double* p = ps[a].second->a.data();
    const double* g = gs[a].second->a.data();
    double* m = state.m[a].a.data();
    double* v = state.v[a].a.data();
    const int64_t n = static_cast<int64_t>(ps[a].second->count());
#pragma omp parallel for schedule(static) if (par)
    for (int64_t j = 0; j < n; ++j) {
      m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
      v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

double clip_gradients(ModelParams& grads, double clip) {
  double ss = 0.0;
  auto arrays = grads.named_arrays();
  for (auto& [name, mat] : arrays)
    for (double x : mat->a) ss += x * x;
  double norm = std::sqrt(ss);
  if (clip > 0.0 && norm > clip) {
    const double scale = clip / norm;
    const bool par = parallel_enabled();
    for (auto& [name, mat] : arrays) {
      double* p = mat->a.data();
      const int64_t n = static_cast<int64_t>(mat->count());
#pragma omp parallel for schedule(static) if (par)
      for (int64_t j = 0; j < n; ++j) p[j] *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// batch construction

namespace {

// prototype-tail first, then query-head; the response is untouchable
void truncate_to_budget(std::vector<int>& query_ids,
                        std::vector<int>& proto_ids, size_t response_len,
                        int max_seq_len) {
  const size_t budget = static_cast<size_t>(max_seq_len);
  const size_t fixed = response_len + 4;  // BOS, two boundaries, EOS
  if (fixed > budget)
    throw std::invalid_argument(
        "make_batch: response alone exceeds the sequence budget");
  size_t room = budget - fixed;
  if (query_ids.size() + proto_ids.size() <= room) return;
  size_t keep_proto = room > query_ids.size() ? room - query_ids.size() : 0;
  if (proto_ids.size() > keep_proto) proto_ids.resize(keep_proto);
  if (query_ids.size() + proto_ids.size() > room) {
    size_t keep_query = room - proto_ids.size();
    query_ids.erase(query_ids.begin(),
                    query_ids.end() - static_cast<long>(keep_query));
  }
}

}  // namespace

std::vector<TrainingExample> make_batch(
    const Dataset& data, const std::vector<size_t>& indices,
    const StyleLexicon& lexicon, const Vocab& vocab, const ModelConfig& mcfg,
    const TrainConfig& tcfg, uint64_t epoch, bool warmup) {
  Corruptor corrupt(lexicon, vocab, tcfg.corruption_rate, tcfg.mask_prob);
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (size_t index : indices) {
    if (index >= data.size())
      throw std::invalid_argument("make_batch: pair index out of range");
    const DialoguePair& pair = data.pairs[index];

    Rng rng(mix_seed(tcfg.seed, "corrupt", epoch, index));
    PrototypeSeq proto = corrupt(pair.response, rng);
    proto.origin = PrototypeOrigin::kReferenceDerived;

    TrainingExample ex;
    ex.style = pair.style;
    ex.query_ids = vocab.encode(pair.query);
    ex.proto_ids = vocab.encode(proto.tokens);
    ex.response_ids = vocab.encode(pair.response);
    ex.response_sv.reserve(pair.response.size());
    for (const std::string& tok : pair.response) {
      bool sv = tcfg.style_specific_weighting
                    ? lexicon.is_stylistic_for(tok, pair.style)
                    : lexicon.is_stylistic(tok);
      ex.response_sv.push_back(sv ? 1 : 0);
    }
    truncate_to_budget(ex.query_ids, ex.proto_ids, ex.response_ids.size(),
                       mcfg.max_seq_len);
    ex.input = assemble_input(ex.query_ids, ex.proto_ids, ex.response_ids,
                              warmup ? -1 : pair.style, ex.response_sv, mcfg);
    out.push_back(std::move(ex));
  }
  return out;
}

LossBreakdown batch_loss_grad(const ModelParams& params,
                              const std::vector<TrainingExample>& batch,
                              double alpha, double beta, ModelParams& grads,
                              uint64_t dropout_seed) {
  if (batch.empty())
    throw std::invalid_argument("batch_loss_grad: empty batch");
  grads.zero_all();
  ModelParams ex_grads = ModelParams::zeros(params.config);
  Workspace ws;
  LossBreakdown sum;
  auto gs = grads.named_arrays();
  auto es = ex_grads.named_arrays();
  const bool par = parallel_enabled();
  const bool use_dropout = params.config.dropout > 0.0;

  for (size_t i = 0; i < batch.size(); ++i) {
    Rng drng(mix_seed(dropout_seed, "drop", i));
    LossBreakdown lb =
        loss_and_grad(params, batch[i].input, alpha, beta, ex_grads, ws,
                      use_dropout ? &drng : nullptr);
    sum.s_mle += lb.s_mle;
    sum.lm += lb.lm;
    sum.total += lb.total;
    for (size_t a = 0; a < gs.size(); ++a) {
      double* dst = gs[a].second->a.data();
      const double* src = es[a].second->a.data();
      const int64_t n = static_cast<int64_t>(gs[a].second->count());
#pragma omp parallel for schedule(static) if (par)
      for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  for (size_t a = 0; a < gs.size(); ++a) {
    double* dst = gs[a].second->a.data();
    const int64_t n = static_cast<int64_t>(gs[a].second->count());
#pragma omp parallel for schedule(static) if (par)
    for (int64_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  sum.s_mle *= inv;
  sum.lm *= inv;
  sum.total *= inv;
  return sum;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr uint32_t kCkptVersion = 1;
constexpr uint32_t kFlagOptimizer = 1u;

void put_array_f32(std::string& out, const Mat& m) {
  for (double x : m.a) put_f32(out, static_cast<float>(x));
}

void get_array_f32(ByteReader& r, Mat& m) {
  for (double& x : m.a) x = static_cast<double>(r.get_f32());
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* opt, uint64_t epochs_completed) {
  std::string buf;
  buf += "SPCK";
  put_u32(buf, kCkptVersion);
  put_u32(buf, opt ? kFlagOptimizer : 0u);
  put_str(buf, model_config_to_json(params.config));
  put_u64(buf, epochs_completed);
  auto arrays = params.named_arrays();
  for (auto& [name, mat] : arrays) {
    put_str(buf, name);
    put_u64(buf, mat->count());
    put_array_f32(buf, *mat);
  }
  if (opt) {
    if (opt->m.size() != arrays.size() || opt->v.size() != arrays.size())
      throw std::invalid_argument("save_checkpoint: optimizer layout mismatch");
    put_u64(buf, opt->step);
    for (size_t a = 0; a < arrays.size(); ++a) {
      put_array_f32(buf, opt->m[a]);
      put_array_f32(buf, opt->v[a]);
    }
  }
  write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);  // reader only views the bytes
  ByteReader r(buf);
  if (r.get_bytes(4) != "SPCK")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = r.get_u32();
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  uint32_t flags = r.get_u32();
  ModelConfig cfg = model_config_from_json(r.get_str());
  cfg.validate();

  Checkpoint ck;
  ck.params = ModelParams::zeros(cfg);
  ck.epochs_completed = r.get_u64();
  auto arrays = ck.params.named_arrays();
  for (auto& [name, mat] : arrays) {
    std::string got = r.get_str();
    if (got != name)
      throw std::runtime_error("checkpoint: expected array '" + name +
                               "', found '" + got + "'");
    uint64_t count = r.get_u64();
    if (count != mat->count())
      throw std::runtime_error("checkpoint: size mismatch in '" + name + "'");
    get_array_f32(r, *mat);
  }
  if (flags & kFlagOptimizer) {
    ck.has_optimizer = true;
    ck.opt = AdamState::zeros(cfg);
    ck.opt.step = r.get_u64();
    for (size_t a = 0; a < arrays.size(); ++a) {
      get_array_f32(r, ck.opt.m[a]);
      get_array_f32(r, ck.opt.v[a]);
    }
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return ck;
}

// ---------------------------------------------------------------------------
// training loop

namespace {

void quantize_moments(AdamState& st) {
  for (Mat& m : st.m) quantize_f32(m);
  for (Mat& m : st.v) quantize_f32(m);
}

std::string format_loss_row(const LossRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%" PRIu64 ",%.17g,%.17g,%.17g\n",
                row.step, row.epoch, row.s_mle, row.lm, row.total);
  return buf;
}

}  // namespace

TrainOutput train(const Dataset& data, const TrainConfig& tcfg,
                  const ModelConfig& mcfg, const StyleLexicon& lexicon,
                  const Vocab& vocab, const std::string& out_dir,
                  const Checkpoint* resume) {
  tcfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty training set");

  ModelConfig mc = mcfg;
  if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
  if (mc.n_styles == 0) mc.n_styles = data.styles.size();
  mc.validate();
  if (mc.vocab_size != vocab.size())
    throw std::invalid_argument("train: config vocab_size does not match the vocab");
  if (mc.n_styles != data.styles.size())
    throw std::invalid_argument(
        "train: config n_styles does not match the corpus style table");

  TrainOutput out;
  ModelParams params;
  AdamState opt;
  uint64_t start_epoch = 0;
  if (resume) {
    if (!resume->has_optimizer)
      throw std::invalid_argument("train: resume checkpoint lacks optimizer state");
    if (!(resume->params.config == mc))
      throw std::invalid_argument("train: resume checkpoint config mismatch");
    params = resume->params;
    opt = resume->opt;
    start_epoch = resume->epochs_completed;
    out.epochs_completed = start_epoch;
  } else {
    params = init_model(mc, tcfg.seed);
    opt = AdamState::zeros(mc);
  }

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir + "/loss.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("train: cannot write " + out_dir + "/loss.csv");
    csv << "step,epoch,s_mle,lm,total\n";
  }

  ModelParams grads = ModelParams::zeros(mc);
  std::vector<size_t> order(data.size());
  bool stopped = false;

  for (uint64_t epoch = start_epoch;
       epoch < static_cast<uint64_t>(tcfg.epochs) && !stopped; ++epoch) {
    // identity first: the permutation must depend on the epoch alone, or
    // resuming mid-run would see a different order
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(mix_seed(tcfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);
    const bool warmup = epoch < static_cast<uint64_t>(tcfg.warmup_epochs);
    const double alpha = warmup ? 0.0 : tcfg.alpha;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(tcfg.batch_size)) {
      if (tcfg.max_steps && opt.step >= tcfg.max_steps) {
        stopped = true;
        break;
      }
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(tcfg.batch_size));
      std::vector<size_t> idx(order.begin() + start, order.begin() + end);
      auto batch = make_batch(data, idx, lexicon, vocab, mc, tcfg, epoch, warmup);

      const uint64_t step_number = opt.step + 1;
      LossBreakdown lb;
      try {
        lb = batch_loss_grad(params, batch, alpha, tcfg.beta, grads,
                             mix_seed(tcfg.seed, "dropout", epoch, start));
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step_number) + ": " + e.what());
      }
      if (!std::isfinite(lb.total))
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step_number) +
                                 ": non-finite loss");
      clip_gradients(grads, tcfg.grad_clip);
      try {
        adam_step(params, grads, opt, tcfg);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step_number) + ": " + e.what());
      }

      LossRow row{opt.step, epoch, lb.s_mle, lb.lm, lb.total};
      out.log.push_back(row);
      if (csv.is_open()) csv << format_loss_row(row);
    }

    if (!stopped) {
      quantize_f32(params);
      quantize_moments(opt);
      out.epochs_completed = epoch + 1;
      if (!out_dir.empty())
        save_checkpoint(out_dir + "/epoch-" + std::to_string(epoch + 1) + ".ckpt",
                        params, &opt, epoch + 1);
    }
  }

  // stores float32 values either way; make the in-memory state match the file
  quantize_f32(params);
  quantize_moments(opt);
  out.params = std::move(params);
  out.opt = std::move(opt);
  if (!out_dir.empty())
    save_checkpoint(out_dir + "/final.ckpt", out.params, &out.opt,
                    out.epochs_completed);
  return out;
}

// ---------------------------------------------------------------------------
// gradient check

namespace {

double loss_scalar(const ModelParams& p, const InputSeq& in, Workspace& ws,
                   double alpha, double beta) {
  forward(p, in, ws);
  return sequence_loss(ws.logprobs, in, alpha, beta).total;
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& cfg, uint64_t seed,
                           double epsilon, double alpha, double beta) {
  cfg.validate();
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be > 0");
  ModelParams params = init_model(cfg, seed);

  // random instance: short query/prototype/response of content tokens
  Rng rng(mix_seed(seed, "gc-example"));
  auto draw_tokens = [&](size_t len) {
    std::vector<int> ids(len);
    for (int& id : ids)
      id = kNumSpecials +
           static_cast<int>(rng.uniform_u64(cfg.vocab_size - kNumSpecials));
    return ids;
  };
  std::vector<int> q = draw_tokens(1 + rng.uniform_index(3));
  std::vector<int> pr = draw_tokens(rng.uniform_index(4));
  std::vector<int> resp = draw_tokens(1 + rng.uniform_index(3));
  StyleId style = static_cast<StyleId>(rng.uniform_u64(cfg.n_styles));
  std::vector<uint8_t> sv(resp.size());
  for (auto& f : sv) f = rng.bernoulli(0.5) ? 1 : 0;
  InputSeq in = assemble_input(q, pr, resp, style, sv, cfg);

  ModelParams analytic = ModelParams::zeros(cfg);
  {
    Workspace ws;
    loss_and_grad(params, in, alpha, beta, analytic, ws);
  }
  auto an = analytic.named_arrays();

  GradCheckReport report;
  for (size_t a = 0; a < an.size(); ++a) {
    const int64_t n = static_cast<int64_t>(an[a].second->count());
    double worst = 0.0;
#pragma omp parallel
    {
      ModelParams local = params;  // private copy to perturb
      Workspace ws;
      double* arr = local.named_arrays()[a].second->a.data();
#pragma omp for schedule(static) reduction(max : worst)
      for (int64_t j = 0; j < n; ++j) {
        const double orig = arr[j];
        arr[j] = orig + epsilon;
        double up = loss_scalar(local, in, ws, alpha, beta);
        arr[j] = orig - epsilon;
        double down = loss_scalar(local, in, ws, alpha, beta);
        arr[j] = orig;
        double fd = (up - down) / (2.0 * epsilon);
        double ref = an[a].second->a[j];
        double rel = std::fabs(ref - fd) /
                     std::max({std::fabs(ref), std::fabs(fd), 1e-3});
        if (rel > worst) worst = rel;
      }
    }
    report.per_array.push_back({an[a].first, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  return report;
}

}  // namespace styleproto
