#include "timt/eval/bleu.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>

using timt::eval::corpus_bleu;

TEST_CASE("perfect hypotheses score 100") {
  std::vector<std::vector<int>> refs = {{1, 2, 3, 4, 5}, {9, 8}, {1}};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("hand-computed example: 4-token prefix of a 5-token reference") {
  // precisions 4/4, 3/3, 2/2, 1/1; BP = exp(1 - 5/4)
  std::vector<std::vector<int>> hyp = {{10, 11, 12, 13}};
  std::vector<std::vector<int>> ref = {{10, 11, 12, 13, 14}};
  const double expected = 100.0 * std::exp(1.0 - 5.0 / 4.0);
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(77.88).epsilon(0.0002));
}

TEST_CASE("disjoint hypotheses score below partial matches") {
  std::vector<std::vector<int>> refs = {{1, 2, 3, 4}};
  std::vector<std::vector<int>> disjoint = {{7, 8, 9, 6}};
  std::vector<std::vector<int>> partial = {{1, 2, 9, 6}};
  const double d = corpus_bleu(disjoint, refs);
  const double p = corpus_bleu(partial, refs);
  CHECK(d == doctest::Approx(0.0));
  CHECK(d < p);
}

TEST_CASE("bounds and monotonic corruption") {
  std::vector<std::vector<int>> refs = {{1, 2, 3, 4, 5, 6}, {4, 5, 6, 7}};
  std::vector<std::vector<int>> perfect = refs;
  const double base = corpus_bleu(perfect, refs);
  CHECK(base == doctest::Approx(100.0));

  std::vector<std::vector<int>> corrupted = refs;
  corrupted[0][2] = 99;
  const double worse = corpus_bleu(corrupted, refs);
  CHECK(worse < base);
  CHECK(worse >= 0.0);
  CHECK(worse <= 100.0);
}

TEST_CASE("short sentences rely on smoothing, never NaN") {
  std::vector<std::vector<int>> refs = {{1, 2}, {3}};
  std::vector<std::vector<int>> hyps = {{1, 2}, {3}};
  const double v = corpus_bleu(hyps, refs);
  CHECK(v == doctest::Approx(100.0));

  std::vector<std::vector<int>> empty_hyp = {{}, {3}};
  const double w = corpus_bleu(empty_hyp, refs);
  CHECK(w >= 0.0);
  CHECK(w <= 100.0);
}

TEST_CASE("error cases") {
  std::vector<std::vector<int>> none;
  CHECK_THROWS_AS(corpus_bleu(none, none), std::invalid_argument);
  std::vector<std::vector<int>> one = {{1}};
  std::vector<std::vector<int>> two = {{1}, {2}};
  CHECK_THROWS_AS(corpus_bleu(one, two), std::invalid_argument);
  std::vector<std::vector<int>> empty_ref = {{}};
  CHECK_THROWS_AS(corpus_bleu(one, empty_ref), std::invalid_argument);
}

TEST_CASE("string overload tokenizes characters") {
  std::vector<std::string> hyp = {"abcd"};
  std::vector<std::string> ref = {"abcde"};
  const double expected = 100.0 * std::exp(1.0 - 5.0 / 4.0);
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(expected));
}
