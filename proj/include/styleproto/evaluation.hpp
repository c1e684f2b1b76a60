#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "styleproto/corpus.hpp"
#include "styleproto/generation.hpp"
#include "styleproto/lexicon.hpp"
#include "styleproto/model.hpp"
#include "styleproto/retrieval.hpp"

namespace styleproto {

// Corpus-level Distinct-n: distinct n-grams across all responses divided by
// the total number of n-gram occurrences (pooled, not per-response averaged).
// Throws when the responses contain no n-gram of this order.
double distinct_n(const std::vector<std::vector<std::string>>& responses,
                  int n);

// Fraction of responses containing at least one SV_style token. A stated
// automatic proxy for the human style-expression judgement, not its
// reproduction. Throws on a style the lexicon does not carry.
double style_marker_rate(const std::vector<std::vector<std::string>>& responses,
                         const StyleLexicon& lexicon, StyleId style);

struct MetricRow {
  std::string name;      // style label, or "overall"
  StyleId style = -1;    // -1 on the overall row
  uint64_t n_responses = 0;
  // raw distinct-n counts so the ratios can be re-derived and cross-checked
  uint64_t d1_distinct = 0, d1_total = 0;
  uint64_t d2_distinct = 0, d2_total = 0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  double marker_rate = 0.0;  // per-style: SV_style; overall: union SV
  double mean_len = 0.0;
  bool has_ref_nll = false;  // true when label-matched references existed
  double mean_ref_nll = 0.0;
};

struct GenRecord {
  std::vector<std::string> query;
  StyleId style = 0;  // target style id in the model's table
  std::string style_label;
  std::vector<std::string> retrieved;
  std::vector<std::string> prototype;
  std::vector<std::string> response;
};

struct EvalReport {
  bool cross_domain = false;  // a test-set label is unknown to the model
  std::string checkpoint_id;
  std::string test_set_id;
  GenerationConfig decode;
  std::vector<MetricRow> per_style;
  MetricRow overall;
  std::vector<GenRecord> records;  // generation order: style-major
};

// Generates one response per (query, target style) over the model's whole
// style table via ps_respond, then computes all metrics per style and pooled.
// Reference NLL is averaged over pairs whose test label maps onto the target
// style; rows without any such pair carry null. Deterministic under greedy
// decoding; sampling derives one stream per (style, query).
EvalReport evaluate(const ModelParams& params, const Dataset& test,
                    const RetrievalIndex& index, const StyleLexicon& lexicon,
                    const Vocab& vocab, const StyleTable& model_styles,
                    const GenerationConfig& cfg,
                    const std::string& checkpoint_id = "",
                    const std::string& test_set_id = "");

// The cross-domain harness: the same metric suite against another corpus's
// test set, with retrieval/lexicon/vocab still the training domain's own.
// Identical to evaluate (the cross_domain flag falls out of the label
// comparison), so the degenerate same-domain case matches evaluate byte for
// byte.
EvalReport cross_domain_eval(const ModelParams& params, const Dataset& test,
                             const RetrievalIndex& index,
                             const StyleLexicon& lexicon, const Vocab& vocab,
                             const StyleTable& model_styles,
                             const GenerationConfig& cfg,
                             const std::string& checkpoint_id = "",
                             const std::string& test_set_id = "");

std::string eval_report_to_json(const EvalReport& report);
std::string eval_report_to_text(const EvalReport& report);
std::string gen_records_to_jsonl(const std::vector<GenRecord>& records);

}  // namespace styleproto
