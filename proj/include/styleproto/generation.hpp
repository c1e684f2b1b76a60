#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "styleproto/corpus.hpp"
#include "styleproto/lexicon.hpp"
#include "styleproto/model.hpp"
#include "styleproto/retrieval.hpp"

namespace styleproto {

enum class DecodeMode { kGreedy, kTopK };

struct GenerationConfig {
  DecodeMode mode = DecodeMode::kGreedy;
  int k = 10;                // candidate pool for top-k sampling
  double temperature = 1.0;  // applied to log-probabilities before sampling
  int max_len = 32;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const GenerationConfig&) const = default;
};

std::string decode_mode_name(DecodeMode mode);
DecodeMode decode_mode_from_name(const std::string& name);

// Autoregressive decoding into the response segment; every appended position
// carries the style embedding. Candidates exclude all special tokens except
// EOS; EOS stops decoding and is not returned. Greedy ties break to the
// lowest token id; sampling is deterministic given cfg.seed. Stops early
// when the context window is exhausted.
std::vector<int> generate(const ModelParams& params, const Vocab& vocab,
                          const std::vector<int>& query_ids,
                          const std::vector<int>& proto_ids, StyleId style,
                          const GenerationConfig& cfg);

struct PsResponse {
  std::vector<std::string> response;
  std::vector<std::string> retrieved;  // nearest training query's response
  std::vector<std::string> prototype;  // retrieved with stylistic words masked
};

// The full pipeline: retrieve (k=1) -> extract_prototype -> generate.
// Retrieved response and prototype depend only on the query, never the style.
PsResponse ps_respond(const RetrievalIndex& index, const StyleLexicon& lexicon,
                      const ModelParams& params, const Vocab& vocab,
                      const std::vector<std::string>& query_tokens,
                      StyleId style, const GenerationConfig& cfg);

// Ablation: identical to generate with an empty prototype segment.
std::vector<std::string> respond_no_retrieval(
    const ModelParams& params, const Vocab& vocab,
    const std::vector<std::string>& query_tokens, StyleId style,
    const GenerationConfig& cfg);

// Mean per-target NLL of a reference response (targets y_1..y_T then EOS)
// under teacher forcing.
double reference_nll(const ModelParams& params,
                     const std::vector<int>& query_ids,
                     const std::vector<int>& proto_ids,
                     const std::vector<int>& response_ids, StyleId style);

}  // namespace styleproto
