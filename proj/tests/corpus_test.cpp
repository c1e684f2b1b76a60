#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "styleproto/common.hpp"
#include "styleproto/corpus.hpp"

using namespace styleproto;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "styleproto_corpus_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("style table registers labels densely") {
  StyleTable t;
  CHECK(t.add("happy") == 0);
  CHECK(t.add("sad") == 1);
  CHECK(t.add("plain", true) == 2);
  CHECK(t.size() == 3);
  CHECK(t.id_of("sad") == 1);
  CHECK(t.id_of("nope") == -1);
  CHECK(t.label(2) == "plain");
  CHECK(t.neutral_id() == 2);
  CHECK_THROWS(t.add("happy"));
  CHECK_THROWS(t.add("other_neutral", true));
}

TEST_CASE("style table round-trips through its file form") {
  StyleTable t;
  t.add("a");
  t.add("b", true);
  std::string path = temp_path("styles.json");
  t.save(path);
  StyleTable back = StyleTable::load(path);
  CHECK(back == t);
  CHECK(back.neutral_id() == 1);
}

TEST_CASE("special token ids are fixed") {
  CHECK(kPad == 0);
  CHECK(kBos == 1);
  CHECK(kEos == 2);
  CHECK(kUnk == 3);
  CHECK(kBoundary == 4);
  CHECK(kMask == 5);
  CHECK(kNumSpecials == 6);
  CHECK(special_name(kMask) == "[MASK]");
  CHECK(special_name(kBoundary) == "[B]");
  CHECK(is_special_token("[PAD]"));
  CHECK(is_special_token("[MASK]"));
  CHECK(!is_special_token("mask"));
}

TEST_CASE("vocab keeps the most frequent tokens with lexicographic ties") {
  Dataset d;
  d.styles.add("s");
  // freq: big=3, mid=2, aa=1, bb=1 (tie broken lexicographically)
  d.pairs.push_back({{"big", "mid"}, {"big", "aa"}, 0});
  d.pairs.push_back({{"mid"}, {"big", "bb"}, 0});
  Vocab full = Vocab::build(d);
  CHECK(full.size() == kNumSpecials + 4);
  CHECK(full.id_of("[MASK]") == kMask);
  CHECK(full.contains("big"));
  CHECK(full.id_of("zzz") == kUnk);

  Vocab capped = Vocab::build(d, 3);
  CHECK(capped.size() == kNumSpecials + 3);
  CHECK(capped.contains("big"));
  CHECK(capped.contains("mid"));
  CHECK(capped.contains("aa"));   // beats bb at equal count
  CHECK(!capped.contains("bb"));
}

TEST_CASE("vocab encode/decode round-trips and maps OOV to UNK") {
  Dataset d;
  d.styles.add("s");
  d.pairs.push_back({{"hello", "there"}, {"hi"}, 0});
  Vocab v = Vocab::build(d);

  std::vector<std::string> toks{"hello", "unknown", "[MASK]"};
  auto ids = v.encode(toks);
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == kUnk);
  CHECK(ids[2] == kMask);
  auto back = v.decode(ids);
  CHECK(back[0] == "hello");
  CHECK(back[1] == "[UNK]");
  CHECK(back[2] == "[MASK]");

  std::string path = temp_path("vocab.json");
  v.save(path);
  Vocab loaded = Vocab::load(path);
  CHECK(loaded.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));
}

TEST_CASE("corpus JSONL round-trips and accepts both token forms") {
  std::string path = temp_path("corpus.jsonl");
  write_file(path,
             "{\"query\": \"hello there\", \"response\": [\"hi\", \"bro\"], "
             "\"style\": \"happy\"}\n"
             "{\"query\": [\"bye\"], \"response\": \"so sad\", \"style\": "
             "\"sad\"}\n");
  Dataset d = load_corpus(path);
  REQUIRE(d.size() == 2);
  CHECK(d.pairs[0].query == std::vector<std::string>{"hello", "there"});
  CHECK(d.pairs[0].response == std::vector<std::string>{"hi", "bro"});
  CHECK(d.styles.label(d.pairs[0].style) == "happy");
  CHECK(d.styles.label(d.pairs[1].style) == "sad");
  CHECK(d.styles.size() == 2);

  std::string out = temp_path("corpus_back.jsonl");
  save_corpus(d, out);
  Dataset back = load_corpus(out);
  REQUIRE(back.size() == d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    CHECK(back.pairs[i].query == d.pairs[i].query);
    CHECK(back.pairs[i].response == d.pairs[i].response);
    CHECK(back.pairs[i].style == d.pairs[i].style);
  }
  CHECK(back.styles == d.styles);
}

TEST_CASE("corpus loading with a fixed table rejects unknown labels") {
  std::string path = temp_path("corpus_labels.jsonl");
  write_file(path, "{\"query\": \"a\", \"response\": \"b\", \"style\": \"x\"}\n");
  StyleTable known;
  known.add("y");
  CHECK_THROWS(load_corpus(path, &known));
  StyleTable has;
  has.add("x");
  Dataset d = load_corpus(path, &has);
  CHECK(d.pairs[0].style == 0);
}

TEST_CASE("held-out split keeps order and is seed-deterministic") {
  Dataset d;
  d.styles.add("a");
  d.styles.add("b");
  for (int i = 0; i < 20; ++i)
    d.pairs.push_back({{"q" + std::to_string(i)}, {"r"}, i % 2});

  auto [train1, test1] = split_test(d, 6, 3);
  auto [train2, test2] = split_test(d, 6, 3);
  CHECK(train1.size() == 14);
  CHECK(test1.size() == 6);
  for (size_t i = 0; i < test1.size(); ++i)
    CHECK(test1.pairs[i].query == test2.pairs[i].query);
  // order preserved: queries strictly increasing by original index
  auto idx_of = [](const DialoguePair& p) {
    return std::stoi(p.query[0].substr(1));
  };
  for (size_t i = 1; i < train1.size(); ++i)
    CHECK(idx_of(train1.pairs[i - 1]) < idx_of(train1.pairs[i]));
  for (size_t i = 1; i < test1.size(); ++i)
    CHECK(idx_of(test1.pairs[i - 1]) < idx_of(test1.pairs[i]));
  CHECK_THROWS(split_test(d, 20, 3));
}

TEST_CASE("stratified split respects per-style proportions") {
  Dataset d;
  d.styles.add("a");
  d.styles.add("b");
  for (int i = 0; i < 30; ++i)
    d.pairs.push_back({{"q" + std::to_string(i)}, {"r"}, i < 20 ? 0 : 1});
  auto [train, test] = split_test(d, 9, 5, /*stratify=*/true);
  size_t a_test = 0, b_test = 0;
  for (const auto& p : test.pairs) (p.style == 0 ? a_test : b_test)++;
  CHECK(a_test == 6);  // 9 * 20/30
  CHECK(b_test == 3);
}

TEST_CASE("paired synthetic corpus differs only at the marker slot") {
  SynthConfig cfg;
  cfg.n_pairs = 40;
  cfg.styles = {"happy", "sad"};
  cfg.seed = 5;
  Dataset d = gen_synthetic(cfg);
  REQUIRE(d.size() == 40);
  CHECK(d.styles.size() == 2);

  for (size_t i = 0; i + 1 < d.size(); i += 2) {
    const auto& a = d.pairs[i];
    const auto& b = d.pairs[i + 1];
    CHECK(a.query == b.query);
    CHECK(a.style == 0);
    CHECK(b.style == 1);
    REQUIRE(a.response.size() == b.response.size());
    size_t diffs = 0, diff_at = 0;
    for (size_t j = 0; j < a.response.size(); ++j) {
      if (a.response[j] != b.response[j]) {
        ++diffs;
        diff_at = j;
      }
    }
    CHECK(diffs == 1);  // the style id is the only signal separating styles
    CHECK(is_synth_marker(a.response[diff_at], "happy"));
    CHECK(is_synth_marker(b.response[diff_at], "sad"));
  }
}

TEST_CASE("unpaired synthetic corpus cycles styles") {
  SynthConfig cfg;
  cfg.n_pairs = 9;
  cfg.styles = {"x", "y", "z"};
  cfg.paired = false;
  cfg.markers_per_style = 2;
  Dataset d = gen_synthetic(cfg);
  REQUIRE(d.size() == 9);
  for (size_t i = 0; i < d.size(); ++i) {
    const auto& p = d.pairs[i];
    CHECK(p.style == static_cast<StyleId>(i % 3));
    size_t markers = 0;
    for (const auto& tok : p.response)
      if (is_synth_marker(tok, d.styles.label(p.style))) ++markers;
    CHECK(markers == 1);
  }
}

TEST_CASE("synthetic generation validates its config") {
  SynthConfig cfg;
  cfg.n_pairs = 1;
  cfg.styles = {"a", "b"};
  CHECK_THROWS(gen_synthetic(cfg));  // fewer pairs than styles
  cfg.n_pairs = 4;
  cfg.styles.clear();
  CHECK_THROWS(gen_synthetic(cfg));
  cfg.styles = {"a"};
  cfg.markers_per_style = 0;
  CHECK_THROWS(gen_synthetic(cfg));
}

TEST_CASE("synthetic corpora are seed-deterministic") {
  SynthConfig cfg;
  cfg.n_pairs = 12;
  cfg.styles = {"a", "b"};
  cfg.seed = 99;
  Dataset d1 = gen_synthetic(cfg);
  Dataset d2 = gen_synthetic(cfg);
  REQUIRE(d1.size() == d2.size());
  for (size_t i = 0; i < d1.size(); ++i) {
    CHECK(d1.pairs[i].query == d2.pairs[i].query);
    CHECK(d1.pairs[i].response == d2.pairs[i].response);
  }
  cfg.seed = 100;
  Dataset d3 = gen_synthetic(cfg);
  bool any_diff = false;
  for (size_t i = 0; i < d1.size(); ++i)
    if (d1.pairs[i].query != d3.pairs[i].query) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("marker naming is its own inverse") {
  std::string m = synth_marker("happy", 2);
  CHECK(m == "happy_marker2");
  CHECK(is_synth_marker(m, "happy"));
  CHECK(!is_synth_marker(m, "sad"));
  CHECK(!is_synth_marker("happy", "happy"));
}
