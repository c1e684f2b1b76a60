#include "styleproto/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace styleproto {

using nlohmann::json;

namespace {

// distinct/total occurrence tally for one n-gram order
struct NgramTally {
  int n;
  uint64_t total = 0;
  std::unordered_set<std::string> seen;

  explicit NgramTally(int order) : n(order) {}

  void add(const std::vector<std::string>& response) {
    if (static_cast<int>(response.size()) < n) return;
    for (size_t i = 0; i + n <= response.size(); ++i) {
      std::string key = response[i];
      for (int j = 1; j < n; ++j) {
        key += ' ';
        key += response[i + j];
      }
      seen.insert(std::move(key));
      ++total;
    }
  }

  uint64_t distinct() const { return seen.size(); }
  double rate() const {
    return total ? static_cast<double>(seen.size()) / static_cast<double>(total)
                 : 0.0;
  }
};

}  // namespace

double distinct_n(const std::vector<std::vector<std::string>>& responses,
                  int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  NgramTally tally(n);
  for (const auto& r : responses) tally.add(r);
  if (tally.total == 0)
    throw std::invalid_argument("distinct_n: no n-grams of order " +
                                std::to_string(n) + " in the responses");
  return tally.rate();
}

double style_marker_rate(const std::vector<std::vector<std::string>>& responses,
                         const StyleLexicon& lexicon, StyleId style) {
  if (!lexicon.has_style(style))
    throw std::invalid_argument("style_marker_rate: unknown style " +
                                std::to_string(style));
  if (responses.empty()) return 0.0;
  size_t hits = 0;
  for (const auto& r : responses) {
    bool has = false;
    for (const auto& tok : r)
      if (lexicon.is_stylistic_for(tok, style)) {
        has = true;
        break;
      }
    if (has) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(responses.size());
}

namespace {

MetricRow make_row(const std::string& name, StyleId style,
                   const std::vector<const GenRecord*>& records,
                   const StyleLexicon& lexicon, bool union_markers,
                   const std::vector<double>& ref_nlls) {
  MetricRow row;
  row.name = name;
  row.style = style;
  row.n_responses = records.size();

  NgramTally t1(1), t2(2);
  uint64_t token_total = 0;
  uint64_t marker_hits = 0;
  for (const GenRecord* rec : records) {
    t1.add(rec->response);
    t2.add(rec->response);
    token_total += rec->response.size();
    bool has = false;
    for (const auto& tok : rec->response) {
      bool stylistic = union_markers ? lexicon.is_stylistic(tok)
                                     : lexicon.is_stylistic_for(tok, style);
      if (stylistic) {
        has = true;
        break;
      }
    }
    if (has) ++marker_hits;
  }
  row.d1_distinct = t1.distinct();
  row.d1_total = t1.total;
  row.d2_distinct = t2.distinct();
  row.d2_total = t2.total;
  row.distinct1 = t1.rate();
  row.distinct2 = t2.rate();
  row.marker_rate = records.empty() ? 0.0
                                    : static_cast<double>(marker_hits) /
                                          static_cast<double>(records.size());
  row.mean_len = records.empty() ? 0.0
                                 : static_cast<double>(token_total) /
                                       static_cast<double>(records.size());
  if (!ref_nlls.empty()) {
    double sum = 0.0;
    for (double v : ref_nlls) sum += v;
    row.has_ref_nll = true;
    row.mean_ref_nll = sum / static_cast<double>(ref_nlls.size());
  }
  return row;
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const Dataset& test,
                    const RetrievalIndex& index, const StyleLexicon& lexicon,
                    const Vocab& vocab, const StyleTable& model_styles,
                    const GenerationConfig& cfg,
                    const std::string& checkpoint_id,
                    const std::string& test_set_id) {
  cfg.validate();
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (model_styles.size() != params.config.n_styles)
    throw std::invalid_argument(
        "evaluate: style table does not match the model");

  EvalReport report;
  report.checkpoint_id = checkpoint_id;
  report.test_set_id = test_set_id;
  report.decode = cfg;
  for (int s = 0; s < test.styles.size(); ++s)
    if (model_styles.id_of(test.styles.label(s)) < 0) report.cross_domain = true;

  const int n_styles = model_styles.size();
  const size_t n_test = test.size();
  report.records.resize(static_cast<size_t>(n_styles) * n_test);

  // one generation per (target style, query); slots are fixed so the parallel
  // map is order-independent
  std::vector<double> ref_nll_slot(report.records.size(), 0.0);
  std::vector<uint8_t> ref_nll_valid(report.records.size(), 0);
  const bool par = parallel_enabled();
  std::string first_error;  // exceptions must not unwind across the omp region
  const int64_t n_slots = static_cast<int64_t>(report.records.size());
#pragma omp parallel for schedule(dynamic) if (par)
  for (int64_t slot = 0; slot < n_slots; ++slot) {
    bool failed;
#pragma omp critical(eval_error)
    failed = !first_error.empty();
    if (failed) continue;
    try {
      const int s = static_cast<int>(slot / static_cast<int64_t>(n_test));
      const size_t i = static_cast<size_t>(slot % static_cast<int64_t>(n_test));
      const DialoguePair& pair = test.pairs[i];
      GenerationConfig call_cfg = cfg;
      call_cfg.seed = mix_seed(cfg.seed, "eval", static_cast<uint64_t>(s), i);
      PsResponse r =
          ps_respond(index, lexicon, params, vocab, pair.query, s, call_cfg);

      GenRecord& rec = report.records[slot];
      rec.query = pair.query;
      rec.style = s;
      rec.style_label = model_styles.label(s);
      rec.retrieved = std::move(r.retrieved);
      rec.prototype = std::move(r.prototype);
      rec.response = std::move(r.response);

      // reference NLL only where the test label maps onto this target style
      if (model_styles.id_of(test.styles.label(pair.style)) == s) {
        std::vector<int> q_ids = vocab.encode(pair.query);
        std::vector<int> p_ids = vocab.encode(rec.prototype);
        std::vector<int> y_ids = vocab.encode(pair.response);
        ref_nll_slot[slot] = reference_nll(params, q_ids, p_ids, y_ids, s);
        ref_nll_valid[slot] = 1;
      }
    } catch (const std::exception& e) {
#pragma omp critical(eval_error)
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!first_error.empty())
    throw std::runtime_error("evaluate: " + first_error);

  for (int s = 0; s < n_styles; ++s) {
    std::vector<const GenRecord*> rows;
    std::vector<double> nlls;
    for (size_t i = 0; i < n_test; ++i) {
      size_t slot = static_cast<size_t>(s) * n_test + i;
      rows.push_back(&report.records[slot]);
      if (ref_nll_valid[slot]) nlls.push_back(ref_nll_slot[slot]);
    }
    report.per_style.push_back(
        make_row(model_styles.label(s), s, rows, lexicon, false, nlls));
  }
  {
    std::vector<const GenRecord*> rows;
    std::vector<double> nlls;
    for (size_t slot = 0; slot < report.records.size(); ++slot) {
      rows.push_back(&report.records[slot]);
      if (ref_nll_valid[slot]) nlls.push_back(ref_nll_slot[slot]);
    }
    report.overall = make_row("overall", -1, rows, lexicon, true, nlls);
  }
  return report;
}

EvalReport cross_domain_eval(const ModelParams& params, const Dataset& test,
                             const RetrievalIndex& index,
                             const StyleLexicon& lexicon, const Vocab& vocab,
                             const StyleTable& model_styles,
                             const GenerationConfig& cfg,
                             const std::string& checkpoint_id,
                             const std::string& test_set_id) {
  return evaluate(params, test, index, lexicon, vocab, model_styles, cfg,
                  checkpoint_id, test_set_id);
}

namespace {

json row_to_json(const MetricRow& row) {
  json j{{"name", row.name},
         {"n_responses", row.n_responses},
         {"distinct1",
          {{"distinct", row.d1_distinct}, {"total", row.d1_total}, {"rate", row.distinct1}}},
         {"distinct2",
          {{"distinct", row.d2_distinct}, {"total", row.d2_total}, {"rate", row.distinct2}}},
         {"marker_rate", row.marker_rate},
         {"mean_len", row.mean_len}};
  if (row.has_ref_nll) j["mean_ref_nll"] = row.mean_ref_nll;
  else j["mean_ref_nll"] = nullptr;
  return j;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  json doc;
  doc["cross_domain"] = report.cross_domain;
  doc["checkpoint_id"] = report.checkpoint_id;
  doc["test_set_id"] = report.test_set_id;
  doc["decode"] = {{"mode", decode_mode_name(report.decode.mode)},
                   {"k", report.decode.k},
                   {"temperature", report.decode.temperature},
                   {"max_len", report.decode.max_len},
                   {"seed", report.decode.seed}};
  doc["note"] =
      "distinct-n is pooled corpus-level; marker rate and reference NLL are "
      "automatic proxies for the human style/quality judgements, not "
      "reproductions of them";
  json styles = json::array();
  for (const MetricRow& row : report.per_style) styles.push_back(row_to_json(row));
  doc["per_style"] = styles;
  doc["overall"] = row_to_json(report.overall);
  return doc.dump(2) + "\n";
}

namespace {

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void append_text_row(std::string& out, const MetricRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-12s %6llu  %8s %8s %8s %8.2f  %s\n", row.name.c_str(),
                static_cast<unsigned long long>(row.n_responses),
                format_rate(row.distinct1).c_str(),
                format_rate(row.distinct2).c_str(),
                format_rate(row.marker_rate).c_str(), row.mean_len,
                row.has_ref_nll ? format_rate(row.mean_ref_nll).c_str() : "-");
  out += buf;
}

}  // namespace

std::string eval_report_to_text(const EvalReport& report) {
  std::string out;
  out += "style        n_resp  dist-1   dist-2   marker   mean_len  ref_nll\n";
  for (const MetricRow& row : report.per_style) append_text_row(out, row);
  append_text_row(out, report.overall);
  if (report.cross_domain) out += "cross_domain: true\n";
  return out;
}

std::string gen_records_to_jsonl(const std::vector<GenRecord>& records) {
  std::string out;
  for (const GenRecord& rec : records) {
    json j{{"query", rec.query},
           {"style", rec.style_label},
           {"retrieved", rec.retrieved},
           {"prototype", rec.prototype},
           {"response", rec.response}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace styleproto
