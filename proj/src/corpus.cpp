#include "styleproto/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace styleproto {

using nlohmann::json;

namespace {

const std::vector<std::string> kSpecialNames = {
    "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[B]", "[MASK]"};

bool has_whitespace(const std::string& s) {
  return std::any_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

std::vector<std::string> tokenize_field(const json& field,
                                        const std::string& name, size_t line) {
  std::vector<std::string> tokens;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error("line " + std::to_string(line) + ": " + msg);
  };
  if (field.is_string()) {
    std::istringstream ss(field.get<std::string>());
    std::string t;
    while (ss >> t) tokens.push_back(t);
  } else if (field.is_array()) {
    for (const auto& el : field) {
      if (!el.is_string()) fail("\"" + name + "\" array must hold strings");
      tokens.push_back(el.get<std::string>());
    }
  } else {
    fail("\"" + name + "\" must be a string or an array of tokens");
  }
  if (tokens.empty()) fail("empty \"" + name + "\"");
  for (const auto& t : tokens) {
    if (t.empty() || has_whitespace(t))
      fail("token with whitespace in \"" + name + "\"");
    if (is_special_token(t))
      fail("special token " + t + " in raw \"" + name + "\"");
  }
  return tokens;
}

}  // namespace

const std::string& special_name(int id) { return kSpecialNames.at(id); }

bool is_special_token(const std::string& token) {
  return std::find(kSpecialNames.begin(), kSpecialNames.end(), token) !=
         kSpecialNames.end();
}

StyleId StyleTable::add(const std::string& label, bool neutral_like) {
  if (index_.count(label))
    throw std::runtime_error("duplicate style label: " + label);
  if (neutral_like && neutral_ >= 0)
    throw std::runtime_error("more than one neutral-like style");
  StyleId id = static_cast<StyleId>(labels_.size());
  labels_.push_back(label);
  index_[label] = id;
  if (neutral_like) neutral_ = id;
  return id;
}

StyleId StyleTable::id_of(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? -1 : it->second;
}

const std::string& StyleTable::label(StyleId id) const {
  return labels_.at(static_cast<size_t>(id));
}

StyleTable StyleTable::load(const std::string& path) {
  json doc = json::parse(read_file(path));
  if (!doc.is_array()) throw std::runtime_error("style table must be a JSON array");
  StyleTable table;
  for (const auto& el : doc) {
    if (el.is_string()) {
      table.add(el.get<std::string>());
    } else if (el.is_object()) {
      table.add(el.at("label").get<std::string>(), el.value("neutral", false));
    } else {
      throw std::runtime_error("style table entries must be strings or objects");
    }
  }
  return table;
}

void StyleTable::save(const std::string& path) const {
  json doc = json::array();
  for (StyleId i = 0; i < size(); ++i) {
    if (i == neutral_) {
      doc.push_back(json{{"label", labels_[i]}, {"neutral", true}});
    } else {
      doc.push_back(labels_[i]);
    }
  }
  write_file(path, doc.dump(2) + "\n");
}

Vocab::Vocab() {
  for (int i = 0; i < kNumSpecials; ++i) {
    tokens_.push_back(kSpecialNames[i]);
    index_[kSpecialNames[i]] = i;
  }
}

Vocab Vocab::build(const Dataset& dataset, size_t cap) {
  if (dataset.empty()) throw std::runtime_error("build_vocab: empty dataset");
  if (cap < 1) throw std::invalid_argument("build_vocab: cap must be >= 1");

  std::unordered_map<std::string, int64_t> counts;
  for (const auto& pair : dataset.pairs) {
    for (const auto& t : pair.query) ++counts[t];
    for (const auto& t : pair.response) ++counts[t];
  }

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > cap) ranked.resize(cap);

  Vocab vocab;
  for (const auto& [token, count] : ranked) {
    (void)count;
    int id = static_cast<int>(vocab.tokens_.size());
    vocab.tokens_.push_back(token);
    vocab.index_[token] = id;
  }
  return vocab;
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  return tokens_.at(static_cast<size_t>(id));
}

bool Vocab::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token(id));
  return tokens;
}

void Vocab::save(const std::string& path) const {
  std::string out;
  for (size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  write_file(path, out);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int id = static_cast<int>(vocab.tokens_.size());
    vocab.tokens_.push_back(line);
    vocab.index_[line] = id;
  }
  return vocab;
}

Dataset load_corpus(const std::string& path, const StyleTable* styles) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  Dataset dataset;
  if (styles) dataset.styles = *styles;

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("query") ||
        !rec.contains("response") || !rec.contains("style"))
      throw std::runtime_error(
          "line " + std::to_string(line_no) +
          ": record must have \"query\", \"response\" and \"style\"");

    DialoguePair pair;
    pair.query = tokenize_field(rec.at("query"), "query", line_no);
    pair.response = tokenize_field(rec.at("response"), "response", line_no);

    std::string label = rec.at("style").get<std::string>();
    StyleId id = dataset.styles.id_of(label);
    if (id < 0) {
      if (styles)
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": unknown style " + label);
      id = dataset.styles.add(label);
    }
    pair.style = id;
    dataset.pairs.push_back(std::move(pair));
  }
  return dataset;
}

void save_corpus(const Dataset& dataset, const std::string& path) {
  std::string out;
  for (const auto& pair : dataset.pairs) {
    json rec{{"query", pair.query},
             {"response", pair.response},
             {"style", dataset.styles.label(pair.style)}};
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::pair<Dataset, Dataset> split_test(const Dataset& dataset, size_t n_test,
                                       uint64_t seed, bool stratify) {
  if (n_test >= dataset.size())
    throw std::invalid_argument("split_test: n_test must be < dataset size");

  std::vector<size_t> test_indices;
  Rng rng(mix_seed(seed, "split_test"));

  if (!stratify) {
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    test_indices.assign(order.begin(), order.begin() + n_test);
  } else {
    // proportional allocation per style, remainders by ascending style id
    int n_styles = dataset.styles.size();
    std::vector<std::vector<size_t>> by_style(n_styles);
    for (size_t i = 0; i < dataset.size(); ++i)
      by_style[dataset.pairs[i].style].push_back(i);
    std::vector<size_t> quota(n_styles, 0);
    size_t assigned = 0;
    for (int s = 0; s < n_styles; ++s) {
      quota[s] = n_test * by_style[s].size() / dataset.size();
      assigned += quota[s];
    }
    for (int s = 0; assigned < n_test && s < n_styles; ++s) {
      while (assigned < n_test && quota[s] < by_style[s].size()) {
        ++quota[s];
        ++assigned;
      }
    }
    for (int s = 0; s < n_styles; ++s) {
      rng.shuffle(by_style[s]);
      test_indices.insert(test_indices.end(), by_style[s].begin(),
                          by_style[s].begin() + quota[s]);
    }
  }

  std::sort(test_indices.begin(), test_indices.end());
  std::vector<bool> in_test(dataset.size(), false);
  for (size_t i : test_indices) in_test[i] = true;

  Dataset train, test;
  train.styles = dataset.styles;
  test.styles = dataset.styles;
  for (size_t i = 0; i < dataset.size(); ++i)
    (in_test[i] ? test : train).pairs.push_back(dataset.pairs[i]);
  return {std::move(train), std::move(test)};
}

std::string synth_marker(const std::string& label, int j) {
  return label + "_marker" + std::to_string(j);
}

bool is_synth_marker(const std::string& token, const std::string& label) {
  return token.rfind(label + "_marker", 0) == 0;
}

Dataset gen_synthetic(const SynthConfig& cfg) {
  if (cfg.styles.empty()) throw std::invalid_argument("gen_synthetic: no styles");
  if (cfg.n_pairs < cfg.styles.size())
    throw std::invalid_argument("gen_synthetic: n_pairs must be >= style count");
  if (cfg.markers_per_style < 1)
    throw std::invalid_argument("gen_synthetic: markers_per_style must be >= 1");
  if (cfg.content_words < 2)
    throw std::invalid_argument("gen_synthetic: need at least 2 content words");

  Dataset dataset;
  for (const auto& label : cfg.styles) dataset.styles.add(label);
  const size_t n_styles = cfg.styles.size();

  std::vector<std::string> content;
  for (int i = 0; i < cfg.content_words; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%02d", i);
    content.push_back(buf);
  }

  Rng rng(mix_seed(cfg.seed, "synth"));
  auto draw_content = [&](size_t len) {
    std::vector<std::string> out;
    for (size_t i = 0; i < len; ++i)
      out.push_back(content[rng.uniform_index(content.size())]);
    return out;
  };

  if (cfg.paired) {
    size_t n_base = (cfg.n_pairs + n_styles - 1) / n_styles;
    for (size_t b = 0; b < n_base && dataset.size() < cfg.n_pairs; ++b) {
      auto query = draw_content(3 + rng.uniform_index(3));
      query.push_back("q" + std::to_string(b));
      auto body = draw_content(3 + rng.uniform_index(4));
      size_t slot = rng.uniform_index(body.size() + 1);
      int marker_idx = static_cast<int>(
          rng.uniform_index(static_cast<size_t>(cfg.markers_per_style)));
      for (size_t s = 0; s < n_styles && dataset.size() < cfg.n_pairs; ++s) {
        DialoguePair pair;
        pair.query = query;
        pair.response = body;
        pair.response.insert(pair.response.begin() + slot,
                             synth_marker(cfg.styles[s], marker_idx));
        pair.style = static_cast<StyleId>(s);
        dataset.pairs.push_back(std::move(pair));
      }
    }
  } else {
    for (size_t i = 0; i < cfg.n_pairs; ++i) {
      size_t s = i % n_styles;
      DialoguePair pair;
      pair.query = draw_content(3 + rng.uniform_index(3));
      pair.query.push_back("q" + std::to_string(i));
      pair.response = draw_content(3 + rng.uniform_index(4));
      size_t slot = rng.uniform_index(pair.response.size() + 1);
      int marker_idx = static_cast<int>(
          rng.uniform_index(static_cast<size_t>(cfg.markers_per_style)));
      pair.response.insert(pair.response.begin() + slot,
                           synth_marker(cfg.styles[s], marker_idx));
      pair.style = static_cast<StyleId>(s);
      dataset.pairs.push_back(std::move(pair));
    }
  }
  return dataset;
}

}  // namespace styleproto
