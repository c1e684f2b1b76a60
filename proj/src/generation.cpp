#include "styleproto/generation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "styleproto/prototype.hpp"

namespace styleproto {

void GenerationConfig::validate() const {
  if (!(temperature > 0.0))
    throw std::invalid_argument("generation: temperature must be > 0");
  if (mode == DecodeMode::kTopK && k < 1)
    throw std::invalid_argument("generation: k must be >= 1 when sampling");
  if (max_len < 1)
    throw std::invalid_argument("generation: max_len must be >= 1");
}

std::string decode_mode_name(DecodeMode mode) {
  return mode == DecodeMode::kGreedy ? "greedy" : "top-k";
}

DecodeMode decode_mode_from_name(const std::string& name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "top-k" || name == "top_k" || name == "topk")
    return DecodeMode::kTopK;
  throw std::invalid_argument("generation: unknown decode mode '" + name + "'");
}

namespace {

inline bool allowed_candidate(int id) {
  return id == kEos || id >= kNumSpecials;
}

int pick_greedy(const std::vector<double>& logprobs) {
  int best = -1;
  double best_lp = 0.0;
  for (int id = 0; id < static_cast<int>(logprobs.size()); ++id) {
    if (!allowed_candidate(id)) continue;
    if (best < 0 || logprobs[id] > best_lp) {  // strict: ties keep the lowest id
      best = id;
      best_lp = logprobs[id];
    }
  }
  return best;
}

int pick_top_k(const std::vector<double>& logprobs, int k, double temperature,
               Rng& rng) {
  std::vector<int> cands;
  cands.reserve(logprobs.size());
  for (int id = 0; id < static_cast<int>(logprobs.size()); ++id)
    if (allowed_candidate(id)) cands.push_back(id);
  const size_t keep = std::min<size_t>(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                    [&](int a, int b) {
                      if (logprobs[a] != logprobs[b])
                        return logprobs[a] > logprobs[b];
                      return a < b;
                    });
  cands.resize(keep);

  double max_lp = logprobs[cands[0]];
  std::vector<double> w(keep);
  double total = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    w[i] = std::exp((logprobs[cands[i]] - max_lp) / temperature);
    total += w[i];
  }
  double u = rng.uniform_real() * total;
  double cum = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    cum += w[i];
    if (u < cum) return cands[i];
  }
  return cands[keep - 1];  // guard against accumulated rounding
}

}  // namespace

std::vector<int> generate(const ModelParams& params, const Vocab& vocab,
                          const std::vector<int>& query_ids,
                          const std::vector<int>& proto_ids, StyleId style,
                          const GenerationConfig& cfg) {
  cfg.validate();
  if (vocab.size() != params.config.vocab_size)
    throw std::invalid_argument("generate: vocab does not match the model");
  InputSeq prefix = assemble_prefix(query_ids, proto_ids, style, params.config);
  DecodeState st = start_decode(params, prefix);
  Rng rng(mix_seed(cfg.seed, "sample"));

  std::vector<int> out;
  while (static_cast<int>(out.size()) < cfg.max_len) {
    int next = cfg.mode == DecodeMode::kGreedy
                   ? pick_greedy(st.last_logprobs)
                   : pick_top_k(st.last_logprobs, cfg.k, cfg.temperature, rng);
    if (next == kEos) break;
    out.push_back(next);
    if (static_cast<int>(out.size()) == cfg.max_len) break;
    if (static_cast<int>(st.tokens.size()) >= params.config.max_seq_len)
      break;  // context window exhausted
    decode_append(params, st, next, kSegR);
  }
  return out;
}

PsResponse ps_respond(const RetrievalIndex& index, const StyleLexicon& lexicon,
                      const ModelParams& params, const Vocab& vocab,
                      const std::vector<std::string>& query_tokens,
                      StyleId style, const GenerationConfig& cfg) {
  std::vector<RetrievalHit> hits = index.retrieve(query_tokens, 1);
  PsResponse res;
  res.retrieved = hits.at(0).response;
  res.prototype = extract_prototype(res.retrieved, lexicon).tokens;

  std::vector<int> query_ids = vocab.encode(query_tokens);
  std::vector<int> proto_ids = vocab.encode(res.prototype);
  std::vector<int> response_ids =
      generate(params, vocab, query_ids, proto_ids, style, cfg);
  res.response = vocab.decode(response_ids);
  return res;
}

std::vector<std::string> respond_no_retrieval(
    const ModelParams& params, const Vocab& vocab,
    const std::vector<std::string>& query_tokens, StyleId style,
    const GenerationConfig& cfg) {
  std::vector<int> query_ids = vocab.encode(query_tokens);
  std::vector<int> response_ids =
      generate(params, vocab, query_ids, {}, style, cfg);
  return vocab.decode(response_ids);
}

double reference_nll(const ModelParams& params,
                     const std::vector<int>& query_ids,
                     const std::vector<int>& proto_ids,
                     const std::vector<int>& response_ids, StyleId style) {
  std::vector<uint8_t> sv(response_ids.size(), 0);
  InputSeq in =
      assemble_input(query_ids, proto_ids, response_ids, style, sv, params.config);
  Mat logprobs = forward(params, in);
  double total = 0.0;
  int count = 0;
  for (int i = 0; i + 1 < in.length(); ++i) {
    if (!in.response_loss[i]) continue;
    total += -logprobs.at(i, in.tokens[i + 1]);
    ++count;
  }
  return count ? total / count : 0.0;
}

}  // namespace styleproto
