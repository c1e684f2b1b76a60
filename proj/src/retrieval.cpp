#include "styleproto/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "styleproto/common.hpp"

namespace styleproto {

double jaccard(const std::unordered_set<std::string>& a,
               const std::unordered_set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& big = a.size() <= b.size() ? b : a;
  size_t inter = 0;
  for (const auto& t : small)
    if (big.count(t)) ++inter;
  return static_cast<double>(inter) /
         static_cast<double>(a.size() + b.size() - inter);
}

double jaccard_tokens(const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
  return jaccard(std::unordered_set<std::string>(a.begin(), a.end()),
                 std::unordered_set<std::string>(b.begin(), b.end()));
}

RetrievalIndex RetrievalIndex::build(const Dataset& train) {
  if (train.empty()) throw std::runtime_error("build_index: empty corpus");
  RetrievalIndex index;
  auto intern = [&index](const std::string& t) -> uint32_t {
    auto it = index.intern_.find(t);
    if (it != index.intern_.end()) return it->second;
    uint32_t id = static_cast<uint32_t>(index.tokens_.size());
    index.intern_.emplace(t, id);
    index.tokens_.push_back(t);
    return id;
  };
  index.entries_.reserve(train.size());
  for (const auto& pair : train.pairs) {
    Entry e;
    e.query_ids.reserve(pair.query.size());
    for (const auto& t : pair.query) e.query_ids.push_back(intern(t));
    std::sort(e.query_ids.begin(), e.query_ids.end());
    e.query_ids.erase(std::unique(e.query_ids.begin(), e.query_ids.end()),
                      e.query_ids.end());
    e.response_ids.reserve(pair.response.size());
    for (const auto& t : pair.response) e.response_ids.push_back(intern(t));
    index.entries_.push_back(std::move(e));
  }
  return index;
}

std::vector<std::string> RetrievalIndex::query_set(size_t i) const {
  std::vector<std::string> out;
  out.reserve(entries_.at(i).query_ids.size());
  for (uint32_t id : entries_.at(i).query_ids) out.push_back(tokens_[id]);
  return out;
}

std::vector<std::string> RetrievalIndex::response(size_t i) const {
  std::vector<std::string> out;
  out.reserve(entries_.at(i).response_ids.size());
  for (uint32_t id : entries_.at(i).response_ids) out.push_back(tokens_[id]);
  return out;
}

RetrievalIndex::InternedQuery RetrievalIndex::intern_query(
    const std::vector<std::string>& query) const {
  InternedQuery q;
  std::unordered_set<std::string> unknown;
  for (const auto& t : query) {
    auto it = intern_.find(t);
    if (it != intern_.end())
      q.ids.push_back(it->second);
    else
      unknown.insert(t);
  }
  std::sort(q.ids.begin(), q.ids.end());
  q.ids.erase(std::unique(q.ids.begin(), q.ids.end()), q.ids.end());
  q.n_unknown = unknown.size();
  return q;
}

double RetrievalIndex::score_entry(const InternedQuery& q,
                                   const Entry& e) const {
  size_t qsize = q.ids.size() + q.n_unknown;
  if (qsize == 0 && e.query_ids.empty()) return 0.0;
  // Both id lists are sorted; walk them in step.
  size_t inter = 0, i = 0, j = 0;
  while (i < q.ids.size() && j < e.query_ids.size()) {
    if (q.ids[i] == e.query_ids[j]) {
      ++inter, ++i, ++j;
    } else if (q.ids[i] < e.query_ids[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(inter) /
         static_cast<double>(qsize + e.query_ids.size() - inter);
}

std::vector<RetrievalHit> RetrievalIndex::select_top(
    const std::vector<double>& scores, size_t k) const {
  k = std::min(k, entries_.size());
  std::vector<size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&scores](size_t a, size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<RetrievalHit> hits;
  hits.reserve(k);
  for (size_t r = 0; r < k; ++r)
    hits.push_back({response(order[r]), scores[order[r]], order[r]});
  return hits;
}

std::vector<RetrievalHit> RetrievalIndex::retrieve(
    const std::vector<std::string>& query, size_t k) const {
  if (entries_.empty()) throw std::runtime_error("retrieve: empty index");
  if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
  InternedQuery q = intern_query(query);
  std::vector<double> scores(entries_.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(entries_.size()); ++i)
    scores[i] = score_entry(q, entries_[i]);
  return select_top(scores, k);
}

std::vector<RetrievalHit> RetrievalIndex::retrieve_serial(
    const std::vector<std::string>& query, size_t k) const {
  if (entries_.empty()) throw std::runtime_error("retrieve: empty index");
  if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
  InternedQuery q = intern_query(query);
  std::vector<double> scores(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i)
    scores[i] = score_entry(q, entries_[i]);
  return select_top(scores, k);
}

void RetrievalIndex::save(const std::string& path) const {
  std::string buf;
  buf += "SPIX";
  put_u32(buf, 1);  // version
  put_u64(buf, tokens_.size());
  for (const auto& t : tokens_) put_str(buf, t);
  put_u64(buf, entries_.size());
  for (const auto& e : entries_) {
    put_u32(buf, static_cast<uint32_t>(e.query_ids.size()));
    for (uint32_t id : e.query_ids) put_u32(buf, id);
    put_u32(buf, static_cast<uint32_t>(e.response_ids.size()));
    for (uint32_t id : e.response_ids) put_u32(buf, id);
  }
  write_file(path, buf);
}

RetrievalIndex RetrievalIndex::load(const std::string& path) {
  std::string buf = read_file(path);
  ByteReader r(buf);
  if (r.get_bytes(4) != "SPIX")
    throw std::runtime_error("retrieval index: bad magic in " + path);
  uint32_t version = r.get_u32();
  if (version != 1)
    throw std::runtime_error("retrieval index: unsupported version " +
                             std::to_string(version));
  RetrievalIndex index;
  uint64_t n_tokens = r.get_u64();
  index.tokens_.reserve(n_tokens);
  for (uint64_t i = 0; i < n_tokens; ++i) {
    index.tokens_.push_back(r.get_str());
    index.intern_.emplace(index.tokens_.back(), static_cast<uint32_t>(i));
  }
  uint64_t n_entries = r.get_u64();
  index.entries_.reserve(n_entries);
  for (uint64_t i = 0; i < n_entries; ++i) {
    Entry e;
    uint32_t nq = r.get_u32();
    e.query_ids.reserve(nq);
    for (uint32_t j = 0; j < nq; ++j) {
      uint32_t id = r.get_u32();
      if (id >= index.tokens_.size())
        throw std::runtime_error("retrieval index: token id out of range");
      e.query_ids.push_back(id);
    }
    uint32_t nr = r.get_u32();
    e.response_ids.reserve(nr);
    for (uint32_t j = 0; j < nr; ++j) {
      uint32_t id = r.get_u32();
      if (id >= index.tokens_.size())
        throw std::runtime_error("retrieval index: token id out of range");
      e.response_ids.push_back(id);
    }
    index.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw std::runtime_error("retrieval index: trailing bytes");
  return index;
}

}  // namespace styleproto
