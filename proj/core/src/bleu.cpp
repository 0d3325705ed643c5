#include "xlat/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace xlat::eval {

namespace {

// Joined n-gram -> count.  Tokens are joined with an unlikely separator so
// multi-token n-grams cannot collide.
std::map<std::string, int64_t> ngram_counts(
    const std::vector<std::string>& tokens, size_t n) {
  std::map<std::string, int64_t> counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (size_t j = 0; j < n; ++j) {
      if (j > 0) key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuReport bleu4(const std::vector<std::vector<std::string>>& candidates,
                 const std::vector<std::vector<std::string>>& references,
                 bool smooth) {
  if (candidates.size() != references.size())
    throw LengthMismatch("candidate and reference lists differ in length");
  if (candidates.empty()) throw EmptyCorpus("no candidate/reference pairs");

  std::array<int64_t, 4> matched{};
  std::array<int64_t, 4> total{};
  BleuReport r;
  for (size_t p = 0; p < candidates.size(); ++p) {
    const auto& cand = candidates[p];
    const auto& ref = references[p];
    r.candidate_length += static_cast<int64_t>(cand.size());
    r.reference_length += static_cast<int64_t>(ref.size());
    for (size_t n = 1; n <= 4; ++n) {
      auto cc = ngram_counts(cand, n);
      auto rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : cc) {
        total[n - 1] += count;
        auto it = rc.find(gram);
        if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (size_t n = 0; n < 4; ++n) {
    double p;
    if (matched[n] > 0) {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    } else if (smooth) {
      p = static_cast<double>(matched[n] + 1) /
          static_cast<double>(total[n] + 1);
    } else {
      p = 0.0;
      zero = true;
    }
    r.precisions[n] = p;
    if (p > 0.0) log_sum += 0.25 * std::log(p);
  }

  r.brevity_penalty =
      (r.candidate_length >= r.reference_length || r.candidate_length == 0)
          ? (r.candidate_length == 0 ? 0.0 : 1.0)
          : std::exp(1.0 - static_cast<double>(r.reference_length) /
                               static_cast<double>(r.candidate_length));
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum);
  return r;
}

}  // namespace xlat::eval
