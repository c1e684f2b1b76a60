#include "styleproto/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace styleproto {

PrototypeSeq extract_prototype(const std::vector<std::string>& response,
                               const StyleLexicon& lexicon) {
  PrototypeSeq proto;
  proto.origin = PrototypeOrigin::kRetrieved;
  proto.tokens.reserve(response.size());
  const std::string mask = special_name(kMask);
  for (const auto& t : response)
    proto.tokens.push_back(lexicon.is_stylistic(t) ? mask : t);
  return proto;
}

Corruptor::Corruptor(const StyleLexicon& lexicon, const Vocab& vocab,
                     double rate, double mask_prob)
    : lexicon_(&lexicon), vocab_(&vocab), rate_(rate), mask_prob_(mask_prob) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument("corrupt: rate must be in [0,1]");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
    throw std::invalid_argument("corrupt: mask_prob must be in [0,1]");
  for (int id = kNumSpecials; id < vocab.size(); ++id)
    if (!lexicon.is_stylistic(vocab.token(id))) pool_.push_back(id);
}

PrototypeSeq Corruptor::operator()(const std::vector<std::string>& reference,
                                   Rng& rng) const {
  PrototypeSeq proto = extract_prototype(reference, *lexicon_);
  proto.origin = PrototypeOrigin::kReferenceDerived;
  const std::string mask = special_name(kMask);

  std::vector<size_t> survivors;
  for (size_t i = 0; i < proto.tokens.size(); ++i)
    if (proto.tokens[i] != mask) survivors.push_back(i);
  const size_t m = survivors.size();
  const size_t k = static_cast<size_t>(std::llround(rate_ * static_cast<double>(m)));
  if (k == 0) return proto;

  // partial Fisher-Yates: the first k slots end up holding a uniform
  // k-subset of the survivor positions
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(rng.uniform_u64(m - i));
    std::swap(survivors[i], survivors[j]);
  }
  std::vector<size_t> chosen(survivors.begin(), survivors.begin() + k);
  std::sort(chosen.begin(), chosen.end());

  for (size_t pos : chosen) {
    if (rng.bernoulli(mask_prob_)) {
      proto.tokens[pos] = mask;
      continue;
    }
    // uniform draw from the pool, skipping the original token's id if the
    // pool contains it
    const std::string& original = proto.tokens[pos];
    size_t skip = pool_.size();  // sentinel: nothing to skip
    if (vocab_->contains(original)) {
      int oid = vocab_->id_of(original);
      auto it = std::lower_bound(pool_.begin(), pool_.end(), oid);
      if (it != pool_.end() && *it == oid)
        skip = static_cast<size_t>(it - pool_.begin());
    }
    size_t effective = pool_.size() - (skip < pool_.size() ? 1 : 0);
    if (effective == 0) {
      proto.tokens[pos] = mask;
      continue;
    }
    size_t r = static_cast<size_t>(rng.uniform_u64(effective));
    if (skip < pool_.size() && r >= skip) ++r;
    proto.tokens[pos] = vocab_->token(pool_[r]);
  }
  return proto;
}

PrototypeSeq corrupt(const std::vector<std::string>& reference,
                     const StyleLexicon& lexicon, double rate,
                     const Vocab& vocab, Rng& rng, double mask_prob) {
  return Corruptor(lexicon, vocab, rate, mask_prob)(reference, rng);
}

}  // namespace styleproto
