#pragma once

#include <string>
#include <vector>

namespace timt::eval {

// Corpus BLEU-4 over token-id sequences: geometric mean of modified n-gram
// precisions (n = 1..4, add-one smoothing when an n >= 2 count is zero) times
// the brevity penalty exp(min(0, 1 - ref_len/hyp_len)). Returns [0, 100].
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references);

// Character-token convenience overload.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

}  // namespace timt::eval
