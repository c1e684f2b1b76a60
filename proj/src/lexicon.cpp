#include "styleproto/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace styleproto {

using nlohmann::json;

namespace {

constexpr size_t kCountBlock = 4096;  // fixed block size keeps the merge
                                      // order independent of thread count

struct BlockCounts {
  std::vector<std::string> words;  // first-seen order within the block
  std::unordered_map<std::string, int> index;
  std::vector<std::vector<int64_t>> count_ws;
  std::vector<int64_t> count_s;

  void bump(const std::string& w, StyleId s, int n_styles) {
    auto it = index.find(w);
    int wi;
    if (it == index.end()) {
      wi = static_cast<int>(words.size());
      index.emplace(w, wi);
      words.push_back(w);
      count_ws.emplace_back(n_styles, 0);
    } else {
      wi = it->second;
    }
    ++count_ws[wi][s];
    ++count_s[s];
  }
};

}  // namespace

StyleCounts count_statistics_serial(const Dataset& train) {
  if (train.empty()) throw std::runtime_error("count_statistics: empty corpus");
  StyleCounts counts;
  counts.n_styles = train.styles.size();
  counts.count_s.assign(counts.n_styles, 0);
  for (const auto& pair : train.pairs) {
    for (const auto& t : pair.response) {
      if (is_special_token(t)) continue;
      auto it = counts.index.find(t);
      int wi;
      if (it == counts.index.end()) {
        wi = static_cast<int>(counts.words.size());
        counts.index.emplace(t, wi);
        counts.words.push_back(t);
        counts.count_ws.emplace_back(counts.n_styles, 0);
        counts.count_w.push_back(0);
      } else {
        wi = it->second;
      }
      ++counts.count_ws[wi][pair.style];
      ++counts.count_w[wi];
      ++counts.count_s[pair.style];
      ++counts.total;
    }
  }
  return counts;
}

StyleCounts count_statistics(const Dataset& train) {
  if (train.empty()) throw std::runtime_error("count_statistics: empty corpus");
  const int n_styles = train.styles.size();
  const size_t n_blocks = (train.size() + kCountBlock - 1) / kCountBlock;

  std::vector<BlockCounts> blocks(n_blocks);
#pragma omp parallel for schedule(dynamic)
  for (int64_t b = 0; b < static_cast<int64_t>(n_blocks); ++b) {
    BlockCounts& block = blocks[b];
    block.count_s.assign(n_styles, 0);
    size_t begin = static_cast<size_t>(b) * kCountBlock;
    size_t end = std::min(begin + kCountBlock, train.size());
    for (size_t i = begin; i < end; ++i) {
      const auto& pair = train.pairs[i];
      for (const auto& t : pair.response) {
        if (is_special_token(t)) continue;
        block.bump(t, pair.style, n_styles);
      }
    }
  }

  StyleCounts counts;
  counts.n_styles = n_styles;
  counts.count_s.assign(n_styles, 0);
  for (const auto& block : blocks) {
    for (size_t bi = 0; bi < block.words.size(); ++bi) {
      const std::string& w = block.words[bi];
      auto it = counts.index.find(w);
      int wi;
      if (it == counts.index.end()) {
        wi = static_cast<int>(counts.words.size());
        counts.index.emplace(w, wi);
        counts.words.push_back(w);
        counts.count_ws.emplace_back(n_styles, 0);
        counts.count_w.push_back(0);
      } else {
        wi = it->second;
      }
      for (int s = 0; s < n_styles; ++s) {
        counts.count_ws[wi][s] += block.count_ws[bi][s];
        counts.count_w[wi] += block.count_ws[bi][s];
      }
    }
    for (int s = 0; s < n_styles; ++s) {
      counts.count_s[s] += block.count_s[s];
      counts.total += block.count_s[s];
    }
  }
  return counts;
}

std::optional<double> pmi(const StyleCounts& counts, const std::string& word,
                          StyleId style) {
  if (style < 0 || style >= counts.n_styles)
    throw std::invalid_argument("pmi: style out of range");
  int wi = counts.word_index(word);
  if (wi < 0) return std::nullopt;
  int64_t joint = counts.count_ws[wi][style];
  if (joint == 0) return std::nullopt;
  return std::log(static_cast<double>(joint) * static_cast<double>(counts.total) /
                  (static_cast<double>(counts.count_w[wi]) *
                   static_cast<double>(counts.count_s[style])));
}

StyleLexicon StyleLexicon::build(const StyleCounts& counts,
                                 const std::vector<StyleId>& style_subset,
                                 double ratio, int64_t min_count) {
  if (style_subset.empty())
    throw std::invalid_argument("build_lexicon: empty style subset");
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("build_lexicon: ratio must be in (0,1]");

  StyleLexicon lex;
  lex.styles_ = style_subset;
  for (StyleId s : style_subset) {
    if (s < 0 || s >= counts.n_styles)
      throw std::invalid_argument("build_lexicon: style out of range");
    if (counts.count_s[s] == 0)
      throw std::runtime_error("build_lexicon: style " + std::to_string(s) +
                               " has no response tokens");
    PerStyle part;
    double max_pmi = -std::numeric_limits<double>::infinity();
    for (size_t wi = 0; wi < counts.words.size(); ++wi) {
      int64_t joint = counts.count_ws[wi][s];
      if (joint == 0) continue;
      double score = std::log(
          static_cast<double>(joint) * static_cast<double>(counts.total) /
          (static_cast<double>(counts.count_w[wi]) *
           static_cast<double>(counts.count_s[s])));
      part.scores.emplace(counts.words[wi], score);
      if (counts.count_w[wi] >= min_count && score > max_pmi) max_pmi = score;
    }
    if (!std::isfinite(max_pmi))
      throw std::runtime_error("build_lexicon: no word meets min_count for style " +
                               std::to_string(s));
    part.threshold = ratio * max_pmi;
    for (size_t wi = 0; wi < counts.words.size(); ++wi) {
      if (counts.count_ws[wi][s] == 0) continue;
      if (counts.count_w[wi] < min_count) continue;
      double score = part.scores.at(counts.words[wi]);
      if (score >= part.threshold) {
        part.members.insert(counts.words[wi]);
        part.entries.push_back({counts.words[wi], score});
        lex.union_.insert(counts.words[wi]);
      }
    }
    std::sort(part.entries.begin(), part.entries.end(),
              [](const LexiconEntry& a, const LexiconEntry& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.word < b.word;
              });
    lex.per_style_.emplace(s, std::move(part));
  }
  lex.union_sorted_.assign(lex.union_.begin(), lex.union_.end());
  std::sort(lex.union_sorted_.begin(), lex.union_sorted_.end());
  return lex;
}

const StyleLexicon::PerStyle& StyleLexicon::part(StyleId s) const {
  auto it = per_style_.find(s);
  if (it == per_style_.end())
    throw std::invalid_argument("lexicon: unknown style " + std::to_string(s));
  return it->second;
}

bool StyleLexicon::is_stylistic(const std::string& word) const {
  return union_.count(word) > 0;
}

bool StyleLexicon::is_stylistic_for(const std::string& word, StyleId s) const {
  return part(s).members.count(word) > 0;
}

double StyleLexicon::threshold(StyleId s) const { return part(s).threshold; }

std::optional<double> StyleLexicon::score(const std::string& word,
                                          StyleId s) const {
  const auto& scores = part(s).scores;
  auto it = scores.find(word);
  if (it == scores.end()) return std::nullopt;
  return it->second;
}

const std::vector<LexiconEntry>& StyleLexicon::entries(StyleId s) const {
  return part(s).entries;
}

bool StyleLexicon::has_style(StyleId s) const { return per_style_.count(s) > 0; }

void StyleLexicon::save(const std::string& path, const StyleTable& table) const {
  json styles = json::array();
  for (StyleId s : styles_) {
    json entries = json::array();
    for (const auto& e : part(s).entries)
      entries.push_back(json::array({e.word, e.score}));
    styles.push_back(json{{"style", s},
                          {"label", table.label(s)},
                          {"threshold", part(s).threshold},
                          {"entries", std::move(entries)}});
  }
  json doc{{"styles", std::move(styles)}, {"union", union_sorted_}};
  write_file(path, doc.dump(2) + "\n");
}

std::pair<StyleLexicon, std::vector<std::string>> StyleLexicon::load(
    const std::string& path) {
  json doc = json::parse(read_file(path));
  StyleLexicon lex;
  std::vector<std::string> labels;
  for (const auto& st : doc.at("styles")) {
    StyleId s = st.at("style").get<StyleId>();
    labels.push_back(st.at("label").get<std::string>());
    PerStyle part;
    part.threshold = st.at("threshold").get<double>();
    for (const auto& e : st.at("entries")) {
      std::string word = e.at(0).get<std::string>();
      double score = e.at(1).get<double>();
      part.scores.emplace(word, score);
      part.members.insert(word);
      part.entries.push_back({std::move(word), score});
      lex.union_.insert(part.entries.back().word);
    }
    lex.styles_.push_back(s);
    lex.per_style_.emplace(s, std::move(part));
  }
  lex.union_sorted_.assign(lex.union_.begin(), lex.union_.end());
  std::sort(lex.union_sorted_.begin(), lex.union_sorted_.end());
  return {std::move(lex), std::move(labels)};
}

std::vector<StyleId> default_style_subset(const StyleTable& table,
                                          bool include_neutral) {
  std::vector<StyleId> subset;
  for (StyleId s = 0; s < table.size(); ++s) {
    if (!include_neutral && s == table.neutral_id()) continue;
    subset.push_back(s);
  }
  if (subset.empty() && table.size() > 0) subset.push_back(table.neutral_id());
  return subset;
}

}  // namespace styleproto
