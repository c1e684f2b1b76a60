#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "styleproto/corpus.hpp"

namespace styleproto {

// Token-level co-occurrence counts over response tokens of the training
// corpus. Queries are never counted.
struct StyleCounts {
  std::vector<std::string> words;                 // index -> word
  std::unordered_map<std::string, int> index;     // word -> index
  std::vector<std::vector<int64_t>> count_ws;     // [word][style]
  std::vector<int64_t> count_w;                   // c(x)
  std::vector<int64_t> count_s;                   // n(s)
  int64_t total = 0;                              // n
  int n_styles = 0;

  int word_index(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? -1 : it->second;
  }
};

StyleCounts count_statistics(const Dataset& train);
// single-pass reference, kept for equivalence testing of the blocked
// parallel version
StyleCounts count_statistics_serial(const Dataset& train);

// PMI(x;s) = log( c(x,s)·n / (c(x)·n(s)) ) under token-level probabilities;
// absent (nullopt) when c(x,s)=0 or the word was never seen.
std::optional<double> pmi(const StyleCounts& counts, const std::string& word,
                          StyleId style);

struct LexiconEntry {
  std::string word;
  double score;
};

// Per-style stylistic vocabularies and their union SV. A word is stylistic
// for s when PMI(x;s) >= t_s with t_s = ratio * max PMI(.;s), subject to
// c(x,s) > 0 and c(x) >= min_count.
class StyleLexicon {
 public:
  static StyleLexicon build(const StyleCounts& counts,
                            const std::vector<StyleId>& style_subset,
                            double ratio, int64_t min_count);

  bool is_stylistic(const std::string& word) const;                // union SV
  bool is_stylistic_for(const std::string& word, StyleId s) const; // SV_s
  double threshold(StyleId s) const;
  std::optional<double> score(const std::string& word, StyleId s) const;

  // SV_s entries sorted by descending score, ties lexicographic
  const std::vector<LexiconEntry>& entries(StyleId s) const;
  // union SV, lexicographically sorted
  const std::vector<std::string>& union_sorted() const { return union_sorted_; }
  const std::vector<StyleId>& styles() const { return styles_; }
  bool has_style(StyleId s) const;

  void save(const std::string& path, const StyleTable& table) const;
  // returns the lexicon plus the labels it was saved with
  static std::pair<StyleLexicon, std::vector<std::string>> load(
      const std::string& path);

 private:
  struct PerStyle {
    double threshold = 0.0;
    std::unordered_map<std::string, double> scores;  // all words with c(x,s)>0
    std::unordered_set<std::string> members;
    std::vector<LexiconEntry> entries;
  };
  std::vector<StyleId> styles_;
  std::unordered_map<StyleId, PerStyle> per_style_;
  std::unordered_set<std::string> union_;
  std::vector<std::string> union_sorted_;
  const PerStyle& part(StyleId s) const;
};

// Default style subset for lexicon building: every style except the
// neutral-like one (when flagged).
std::vector<StyleId> default_style_subset(const StyleTable& table,
                                          bool include_neutral = false);

}  // namespace styleproto
