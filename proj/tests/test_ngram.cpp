#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lmaug/error.hpp"
#include "lmaug/ngram.hpp"
#include "lmaug/text.hpp"
#include "support/kn_oracle.hpp"
#include "support/toy_corpus.hpp"

using namespace lmaug;
using namespace lmaug::ngram;
using lmaug::testing::Gram;

namespace {

Sentences words(const std::vector<std::string>& lines) {
  Sentences out;
  for (const auto& l : lines) out.push_back(lmaug::text::split_words(l));
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("lmaug_test_ngram_" + name)).string();
}

double prob(const NGramModel& m, const std::string& w, const Gram& h) {
  return std::pow(10.0, m.log10_prob(w, h));
}

}  // namespace

TEST_CASE("bigram counts of a single sentence") {
  auto t = count_ngrams(words({"a b"}), 2);
  CHECK(t.size(2) == 3);
  CHECK(t.count(Gram{"<s>", "a"}) == 1);
  CHECK(t.count(Gram{"a", "b"}) == 1);
  CHECK(t.count(Gram{"b", "</s>"}) == 1);
  CHECK(t.count(Gram{"<s>"}) == 0);
  CHECK(count_ngrams(words({"a a a"}), 1).count(Gram{"a"}) == 3);
}

TEST_CASE("counts match a brute-force counter") {
  for (int order = 1; order <= 4; ++order) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto corpus = lmaug::testing::toy_corpus(50, 12, seed * 31 + static_cast<std::uint64_t>(order));
      auto t = count_ngrams(corpus, order);
      auto naive = lmaug::testing::naive_counts(corpus, order);
      for (int k = 1; k <= order; ++k) {
        const auto& ref = naive[static_cast<std::size_t>(k - 1)];
        REQUIRE(t.size(k) == ref.size());
        for (const auto& [g, c] : ref) CHECK(t.count(g) == static_cast<std::uint64_t>(c));
      }
    }
  }
}

TEST_CASE("counting is additive over corpus union") {
  auto x = lmaug::testing::toy_corpus(30, 10, 5);
  auto y = lmaug::testing::toy_corpus(40, 14, 6);
  Sentences xy = x;
  xy.insert(xy.end(), y.begin(), y.end());
  auto tx = count_ngrams(x, 3), ty = count_ngrams(y, 3), txy = count_ngrams(xy, 3);
  for (int k = 1; k <= 3; ++k) {
    for (const auto& [key, c] : txy.counts[static_cast<std::size_t>(k - 1)]) {
      Gram g;
      for (WordId id : unpack(key, k)) g.push_back(txy.vocab.word(id));
      CHECK(c == tx.count(g) + ty.count(g));
    }
  }
}

TEST_CASE("counting rejects bad input") {
  CHECK_THROWS_AS(count_ngrams({}, 2), Error);
  CHECK_THROWS_AS(count_ngrams(words({"a"}), 0), Error);
  CHECK_THROWS_AS(count_ngrams(words({"a"}), kMaxOrder + 1), Error);
}

TEST_CASE("continuation counts for the unigram level") {
  // Four distinct bigrams (<s> a) (a b) (b c) (c </s>); each word has one
  // distinct left context.
  auto t = count_ngrams(words({"a b c", "a b c"}), 2);
  auto adj = adjusted_counts(t, 1);
  std::uint64_t total = 0;
  for (const auto& kv : adj) total += kv.second;
  CHECK(total == 4);
  CHECK(adj.at(t.vocab.find("b")) == 1);
  CHECK(static_cast<double>(adj.at(t.vocab.find("b"))) / static_cast<double>(total) == doctest::Approx(0.25));
  // Highest order keeps raw counts.
  CHECK(adjusted_counts(t, 2).at(pack(std::vector<WordId>{t.vocab.find("a"), t.vocab.find("b")})) == 2);
}

TEST_CASE("discount estimation and fallback") {
  std::unordered_map<GramKey, std::uint64_t> c;
  GramKey k = 0;
  for (int i = 0; i < 10; ++i) c[k++] = 1;
  for (int i = 0; i < 5; ++i) c[k++] = 2;
  for (int i = 0; i < 3; ++i) c[k++] = 3;
  for (int i = 0; i < 2; ++i) c[k++] = 4;
  auto d = estimate_discounts(c);
  double y = 10.0 / (10 + 2 * 5);
  CHECK_FALSE(d.fallback);
  CHECK(d.d[0] == doctest::Approx(1 - 2 * y * 5 / 10));
  CHECK(d.d[1] == doctest::Approx(2 - 3 * y * 3 / 5));
  CHECK(d.d[2] == doctest::Approx(3 - 4 * y * 2 / 3));

  std::unordered_map<GramKey, std::uint64_t> no_twos{{1, 1}, {2, 1}, {3, 3}};
  CHECK(estimate_discounts(no_twos).fallback);
  CHECK(estimate_discounts(no_twos).d[0] == 0.5);
}

TEST_CASE("two-sentence bigram model normalizes") {
  auto m = estimate_kneser_ney(count_ngrams(words({"a b", "b a"}), 2));
  CHECK(max_normalization_error(m) < 1e-6);
  for (const auto& kv : m.grams(1)) CHECK(kv.second.log_prob <= 0.0);
}

TEST_CASE("modified KN matches the formula oracle") {
  for (int order = 1; order <= 4; ++order) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto corpus = lmaug::testing::toy_corpus(seed == 3 ? 80 : 20, 8, seed + 100 * static_cast<std::uint64_t>(order));
      std::vector<std::string> extra{"unseen"};
      auto model = estimate_kneser_ney(count_ngrams(corpus, order, extra));
      lmaug::testing::KneserNeyOracle oracle(corpus, order, extra);
      REQUIRE(oracle.vocab().size() + 1 == model.vocab().size());
      double worst = 0.0;
      auto contexts = model.contexts();
      contexts.push_back({Vocab::kStart, model.vocab().find("w1"), model.vocab().find("w1")});
      for (const auto& ctx : contexts) {
        Gram h;
        for (WordId id : ctx) h.push_back(model.vocab().word(id));
        for (const auto& w : oracle.vocab())
          worst = std::max(worst, std::abs(prob(model, w, h) - oracle.prob(w, h)));
      }
      CHECK_MESSAGE(worst < 1e-6, "order " << order << " seed " << seed << " worst " << worst);
      CHECK(max_normalization_error(model) < 1e-6);
    }
  }
}

TEST_CASE("pruning") {
  auto corpus = lmaug::testing::toy_corpus(200, 20, 9);
  auto t = count_ngrams(corpus, 3);
  auto same = prune_counts(t, {1, 1, 1});
  for (int k = 1; k <= 3; ++k) CHECK(same.counts[static_cast<std::size_t>(k - 1)] == t.counts[static_cast<std::size_t>(k - 1)]);

  auto small = count_ngrams(words({"a b", "a c", "a c"}), 2);
  auto pruned = prune_counts(small, {1, 2});
  CHECK(pruned.count(Gram{"a", "b"}) == 0);
  CHECK(pruned.count(Gram{"a", "c"}) == 2);
  auto all = prune_counts(small, {100, 100});
  CHECK(all.count(Gram{"</s>"}) == small.count(Gram{"</s>"}));
  CHECK(all.count(Gram{"a"}) == 0);
  CHECK(all.size(2) == 0);
  CHECK_THROWS_AS(prune_counts(small, {1}), Error);

  auto p = prune_counts(t, {2, 2, 3});
  CHECK(p.size(3) < t.size(3));
  for (int k = 2; k <= 3; ++k)
    for (const auto& kv : p.counts[static_cast<std::size_t>(k - 1)]) {
      GramKey prefix = key_prefix(kv.first);
      CHECK(((k == 2 && prefix == Vocab::kStart) || p.counts[static_cast<std::size_t>(k - 2)].count(prefix)));
      CHECK(p.counts[static_cast<std::size_t>(k - 2)].count(key_suffix(kv.first, k)));
    }
  auto pm = estimate_kneser_ney(p);
  CHECK(max_normalization_error(pm) < 1e-6);
  CHECK(max_normalization_error(estimate_kneser_ney(all)) < 1e-6);
}

TEST_CASE("unigram model of a deterministic corpus") {
  const int n = 10;
  Sentences corpus(n, Sentences::value_type{"a"});
  auto m = estimate_kneser_ney(count_ngrams(corpus, 1));
  // Counts a:n, </s>:n have no singletons, so D = 0.5; vocabulary {a, </s>, <unk>}.
  double gamma = 0.5 * 2 / (2.0 * n);
  double pa = (n - 0.5) / (2.0 * n) + gamma / 3;
  CHECK(m.score({"a"}) == doctest::Approx(2 * std::log10(pa)).epsilon(1e-12));
  CHECK(prob(m, "<unk>", {}) == doctest::Approx(gamma / 3));
}

TEST_CASE("verbose scores add up") {
  auto corpus = lmaug::testing::toy_corpus(100, 15, 4);
  auto m = estimate_kneser_ney(count_ngrams(corpus, 3));
  std::vector<double> per;
  for (const auto& s : lmaug::testing::toy_corpus(10, 18, 77)) {
    double total = m.score(s, &per);
    CHECK(per.size() == s.size() + 1);
    double sum = 0;
    for (double v : per) sum += v;
    CHECK(total == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("backoff walk on a handwritten model") {
  const std::string arpa =
      "\\data\\\nngram 1=5\nngram 2=2\n\n\\1-grams:\n-1.0\t<unk>\n-0.5\t</s>\n-99\t<s>\t-0.3\n"
      "-0.6\ta\t-0.2\n-0.9\tb\t-0.1\n\n\\2-grams:\n-0.2\t<s> a\n-0.4\ta b\n\n\\end\\\n";
  auto m = parse_arpa(arpa);
  // P(a|<s>) stored; P(b|a) stored; P(a|b) = bo(b) P(a); P(</s>|a) = bo(a) P(</s>).
  CHECK(m.log10_prob("a", Gram{"b"}) == doctest::Approx(-0.1 - 0.6));
  CHECK(m.score({"a", "b", "a"}) == doctest::Approx(-0.2 - 0.4 - 0.7 - 0.7));
  // Unknown word after <s>: bo(<s>) P(<unk>).
  CHECK(m.score({"zzz"}) == doctest::Approx(-0.3 - 1.0 - 0.5));
}

TEST_CASE("perplexity") {
  std::string arpa = "\\data\\\nngram 1=5\n\n\\1-grams:\n";
  char lp[32];
  std::snprintf(lp, sizeof lp, "%.17g", std::log10(0.25));
  for (const char* w : {"</s>", "<unk>", "x", "y"}) arpa += std::string(lp) + "\t" + w + "\n";
  arpa += "-99\t<s>\n\n\\end\\\n";
  auto uniform = parse_arpa(arpa);
  auto corpus = words({"x y x", "y", "x x"});
  CHECK(perplexity(uniform, corpus) == doctest::Approx(4.0).epsilon(1e-9));
  CHECK_THROWS_AS(perplexity(uniform, {}), Error);

  auto m = estimate_kneser_ney(count_ngrams(lmaug::testing::toy_corpus(80, 12, 2), 3));
  auto test = lmaug::testing::toy_corpus(30, 12, 3);
  auto reversed = Sentences(test.rbegin(), test.rend());
  CHECK(perplexity(m, test) == doctest::Approx(perplexity(m, reversed)).epsilon(1e-12));
}

TEST_CASE("golden fixture agrees with an independent ARPA evaluator") {
  std::string path = std::string(LMAUG_TEST_DATA_DIR) + "/golden.arpa";
  auto m = read_arpa(path);
  lmaug::testing::ArpaWalker walker(slurp(path));
  auto test = words({"the cat sat", "cat the sat dog", "sat", "the the cat sat sat"});
  double ours = perplexity(m, test);
  double theirs = walker.perplexity(test);
  CHECK(std::abs(ours - theirs) / theirs < 5e-5);
  CHECK(perplexity(m, words({"the cat sat"})) == doctest::Approx(std::pow(10.0, 1.1 / 4)));
  // The fixture is already in canonical order.
  CHECK(to_arpa(m) == slurp(path));
}

TEST_CASE("trained models agree with the independent ARPA evaluator") {
  auto m = estimate_kneser_ney(count_ngrams(lmaug::testing::toy_corpus(300, 25, 8), 4));
  lmaug::testing::ArpaWalker walker(to_arpa(m));
  auto test = lmaug::testing::toy_corpus(50, 28, 9);
  CHECK(perplexity(m, test) == doctest::Approx(walker.perplexity(test)).epsilon(1e-6));
}

TEST_CASE("ARPA round trip") {
  auto m = estimate_kneser_ney(prune_counts(count_ngrams(lmaug::testing::toy_corpus(300, 25, 12), 4), {1, 1, 2, 2}));
  std::string p1 = temp_path("a.arpa"), p2 = temp_path("b.arpa");
  write_arpa(m, p1);
  auto back = read_arpa(p1);
  REQUIRE(back.order() == m.order());
  double worst = 0;
  for (int k = 1; k <= m.order(); ++k) {
    REQUIRE(back.grams(k).size() == m.grams(k).size());
    for (const auto& [key, e] : m.grams(k)) {
      Gram g;
      for (WordId id : unpack(key, k)) g.push_back(m.vocab().word(id));
      std::vector<WordId> ids;
      for (const auto& w : g) ids.push_back(back.vocab().find(w));
      const Entry* b = back.find(ids);
      REQUIRE(b != nullptr);
      worst = std::max({worst, std::abs(b->log_prob - e.log_prob), std::abs(b->log_backoff - e.log_backoff)});
    }
  }
  CHECK(worst < 1e-6);
  write_arpa(back, p2);
  CHECK(slurp(p1) == slurp(p2));
  write_arpa(read_arpa(p2), p1);
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("ARPA parse errors carry line numbers") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_arpa(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  const std::string good = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\t</s>\n-0.5\tx\n\n\\end\\\n";
  CHECK_NOTHROW(parse_arpa(good));
  CHECK(line_of("nonsense\n") == 1);
  CHECK(line_of("\\data\\\nngram 1=3\n\n\\1-grams:\n-0.5\t</s>\n-0.5\tx\n\n\\end\\\n") == 8);
  CHECK(line_of("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\t</s>\nabc\tx\n\n\\end\\\n") == 6);
  CHECK(line_of("\\data\\\nngram 1=2\n\n\\2-grams:\n-0.5\t</s>\n-0.5\tx\n\n\\end\\\n") == 4);
  CHECK(line_of("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\t</s>\n-0.5\tx y\n\n\\end\\\n") == 6);
  CHECK(line_of("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\t</s>\n-0.5\tx\n") == 6);
  CHECK_THROWS_AS(read_arpa(temp_path("missing.arpa")), Error);
}

TEST_CASE("count dump") {
  std::string p = temp_path("counts.txt");
  write_counts(count_ngrams(words({"a b", "a"}), 2), p);
  CHECK(slurp(p) == "</s>\t2\na\t2\nb\t1\n<s> a\t2\na </s>\t1\na b\t1\nb </s>\t1\n");
  std::filesystem::remove(p);
}

TEST_CASE("more training data does not hurt held-out perplexity") {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto pool = lmaug::testing::toy_corpus(4000, 30, seed * 1000);
    Sentences half(pool.begin(), pool.begin() + 1000), full(pool.begin(), pool.begin() + 2000);
    Sentences held(pool.begin() + 3000, pool.end());
    std::vector<std::string> vocab;
    for (int i = 0; i < 30; ++i) vocab.push_back("w" + std::to_string(i));
    double a = perplexity(estimate_kneser_ney(count_ngrams(half, 3, vocab)), held);
    double b = perplexity(estimate_kneser_ney(count_ngrams(full, 3, vocab)), held);
    improved += b <= a;
  }
  CHECK(improved == 5);
}
