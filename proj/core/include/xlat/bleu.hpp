#pragma once
// Corpus-level BLEU-4 over whitespace token sequences: clipped n-gram
// precision sums across the corpus, optional add-one smoothing on zero
// precisions, and the standard brevity penalty on corpus totals.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xlat/errors.hpp"

namespace xlat::eval {

struct BleuReport {
  double bleu = 0.0;                     // 0..100
  std::array<double, 4> precisions{};    // p1..p4
  double brevity_penalty = 1.0;
  int64_t candidate_length = 0;
  int64_t reference_length = 0;
};

// Corpus BLEU-4. With smoothing, a zero clipped-match count for order n is
// scored as (matches+1)/(total+1); without it any zero precision makes the
// score 0.
BleuReport bleu4(const std::vector<std::vector<std::string>>& candidates,
                 const std::vector<std::vector<std::string>>& references,
                 bool smooth = true);

}  // namespace xlat::eval
