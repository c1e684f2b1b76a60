#pragma once

// Jaccard nearest-query retrieval over the training corpus.  The index keeps
// its own token table: query tokens it has never seen can't match anything,
// so no shared vocabulary with the model is needed.

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "styleproto/corpus.hpp"

namespace styleproto {

double jaccard(const std::unordered_set<std::string>& a,
               const std::unordered_set<std::string>& b);
// Set-izes both sequences first (Jaccard is a set measure).
double jaccard_tokens(const std::vector<std::string>& a,
                      const std::vector<std::string>& b);

struct RetrievalHit {
  std::vector<std::string> response;
  double score = 0.0;
  size_t corpus_index = 0;
};

class RetrievalIndex {
 public:
  static RetrievalIndex build(const Dataset& train);

  size_t size() const { return entries_.size(); }
  std::vector<std::string> query_set(size_t i) const;  // sorted by first use
  std::vector<std::string> response(size_t i) const;

  // Top-k by descending Jaccard score, ties by ascending corpus index.  k is
  // clamped to the index size.  The per-entry scan runs parallel; selection
  // is a serial pass over the complete score vector, so the result is
  // identical at any thread count.
  std::vector<RetrievalHit> retrieve(const std::vector<std::string>& query,
                                     size_t k) const;
  // Single-threaded scan, kept as the reference for tests and the benchmark.
  std::vector<RetrievalHit> retrieve_serial(
      const std::vector<std::string>& query, size_t k) const;

  void save(const std::string& path) const;
  static RetrievalIndex load(const std::string& path);

  bool operator==(const RetrievalIndex&) const = default;

 private:
  struct Entry {
    std::vector<uint32_t> query_ids;  // sorted, deduplicated
    std::vector<uint32_t> response_ids;
    bool operator==(const Entry&) const = default;
  };

  struct InternedQuery {
    std::vector<uint32_t> ids;  // known tokens, sorted, deduplicated
    size_t n_unknown = 0;       // distinct tokens absent from the table
  };

  InternedQuery intern_query(const std::vector<std::string>& query) const;
  double score_entry(const InternedQuery& q, const Entry& e) const;
  std::vector<RetrievalHit> select_top(const std::vector<double>& scores,
                                       size_t k) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, uint32_t> intern_;
  std::vector<Entry> entries_;
};

}  // namespace styleproto
