#include "timt/eval/bleu.hpp"

#include "timt/common.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace timt::eval {

namespace {

constexpr int kMaxOrder = 4;

using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts count_ngrams(const std::vector<int>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references) {
  require(!hypotheses.empty(), "empty corpus");
  require(hypotheses.size() == references.size(),
          "hypothesis/reference count mismatch");

  long hyp_len = 0, ref_len = 0;
  long matches[kMaxOrder] = {0, 0, 0, 0};
  long totals[kMaxOrder] = {0, 0, 0, 0};

  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const std::vector<int>& hyp = hypotheses[s];
    const std::vector<int>& ref = references[s];
    require(!ref.empty(), "empty reference");
    hyp_len += static_cast<long>(hyp.size());
    ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      NgramCounts hyp_counts = count_ngrams(hyp, n);
      NgramCounts ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        totals[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) {
          matches[n - 1] += std::min(count, it->second);
        }
      }
    }
  }

  if (hyp_len == 0) return 0.0;

  double log_prec_sum = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    double m = static_cast<double>(matches[n - 1]);
    double t = static_cast<double>(totals[n - 1]);
    if (n >= 2 && matches[n - 1] == 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0) return 0.0;  // unigram miss across the whole corpus
    log_prec_sum += std::log(m / t);
  }

  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / hyp_len));
  return 100.0 * bp * std::exp(log_prec_sum / kMaxOrder);
}

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  std::vector<std::vector<int>> hyp_ids(hypotheses.size());
  std::vector<std::vector<int>> ref_ids(references.size());
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_ids[i].assign(hypotheses[i].begin(), hypotheses[i].end());
  }
  for (size_t i = 0; i < references.size(); ++i) {
    ref_ids[i].assign(references[i].begin(), references[i].end());
  }
  return corpus_bleu(hyp_ids, ref_ids);
}

}  // namespace timt::eval
