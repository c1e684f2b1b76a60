#pragma once

// Response prototypes: stylistic-word masking for inference, plus the
// de-noising corruption that builds training prototypes from references.

#include <string>
#include <vector>

#include "styleproto/common.hpp"
#include "styleproto/corpus.hpp"
#include "styleproto/lexicon.hpp"

namespace styleproto {

enum class PrototypeOrigin { kRetrieved, kReferenceDerived };

struct PrototypeSeq {
  std::vector<std::string> tokens;
  PrototypeOrigin origin = PrototypeOrigin::kRetrieved;
};

// Replaces every stylistic word (lexicon union) with [MASK], in place.
// Length- and position-preserving.
PrototypeSeq extract_prototype(const std::vector<std::string>& response,
                               const StyleLexicon& lexicon);

// Two-step training corruption: stylistic masking first, then exactly
// round(rate * survivors) distinct surviving positions are altered — each
// becomes [MASK] with probability mask_prob, otherwise a uniform draw from
// the content vocabulary excluding specials, stylistic words, and the
// original token (so the altered count is exact under a position diff).
// An empty replacement pool falls back to [MASK].
class Corruptor {
 public:
  Corruptor(const StyleLexicon& lexicon, const Vocab& vocab, double rate = 0.4,
            double mask_prob = 0.5);

  PrototypeSeq operator()(const std::vector<std::string>& reference,
                          Rng& rng) const;

  size_t pool_size() const { return pool_.size(); }

 private:
  const StyleLexicon* lexicon_;
  const Vocab* vocab_;
  double rate_;
  double mask_prob_;
  std::vector<int> pool_;  // sorted content-token ids outside the lexicon
};

// One-shot convenience over Corruptor.
PrototypeSeq corrupt(const std::vector<std::string>& reference,
                     const StyleLexicon& lexicon, double rate,
                     const Vocab& vocab, Rng& rng, double mask_prob = 0.5);

}  // namespace styleproto
