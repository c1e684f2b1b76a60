#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "styleproto/common.hpp"

namespace styleproto {

using StyleId = int;

// Dense style registry; ids are 0..size()-1 in registration order. At most
// one style may be flagged neutral-like (excluded from lexicon building by
// default).
class StyleTable {
 public:
  StyleId add(const std::string& label, bool neutral_like = false);
  StyleId id_of(const std::string& label) const;  // -1 if unknown
  const std::string& label(StyleId id) const;
  int size() const { return static_cast<int>(labels_.size()); }
  StyleId neutral_id() const { return neutral_; }

  bool operator==(const StyleTable& other) const {
    return labels_ == other.labels_ && neutral_ == other.neutral_;
  }

  static StyleTable load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, StyleId> index_;
  StyleId neutral_ = -1;
};

struct DialoguePair {
  std::vector<std::string> query;
  std::vector<std::string> response;
  StyleId style = 0;
};

struct Dataset {
  std::vector<DialoguePair> pairs;
  StyleTable styles;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// Special token ids are fixed for checkpoint portability.
enum Special : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kUnk = 3,
  kBoundary = 4,
  kMask = 5,
};
constexpr int kNumSpecials = 6;
const std::string& special_name(int id);
bool is_special_token(const std::string& token);

// Token <-> id bijection over the 6 specials plus at most `cap` content
// tokens (the most frequent ones, ties broken lexicographically).
class Vocab {
 public:
  static Vocab build(const Dataset& dataset, size_t cap = 20000);

  int id_of(const std::string& token) const;  // kUnk when out of vocab
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  int content_size() const { return size() - kNumSpecials; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  Vocab();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// JSONL corpus: {"query": "...", "response": "...", "style": "..."} per line,
// query/response either a whitespace-tokenized string or an array of tokens.
// With a style table given, unknown labels are an error; without one labels
// are registered in first-appearance order.
Dataset load_corpus(const std::string& path,
                    const StyleTable* styles = nullptr);
void save_corpus(const Dataset& dataset, const std::string& path);

// Deterministic held-out split; both halves keep corpus order.
std::pair<Dataset, Dataset> split_test(const Dataset& dataset, size_t n_test,
                                       uint64_t seed, bool stratify = false);

struct SynthConfig {
  size_t n_pairs = 0;
  std::vector<std::string> styles;
  int markers_per_style = 3;
  uint64_t seed = 0;
  // paired: every query appears once per style, responses sharing content and
  // differing only in the marker token, so the style id is the only signal
  // separating the styles.
  bool paired = true;
  int content_words = 25;
};

Dataset gen_synthetic(const SynthConfig& cfg);

// marker token for a synthetic style, e.g. "happy_marker2"
std::string synth_marker(const std::string& label, int j);
bool is_synth_marker(const std::string& token, const std::string& label);

}  // namespace styleproto
