#include <cmath>

#include "doctest.h"
#include "lmaug/error.hpp"
#include "lmaug/interpolate.hpp"
#include "lmaug/random.hpp"
#include "support/toy_corpus.hpp"

using namespace lmaug;
using namespace lmaug::ngram;

using lmaug::testing::relabel;
using lmaug::testing::shared_vocab;
using lmaug::testing::toy_model;

TEST_CASE("single and duplicated components") {
  auto a = toy_model(100, 1, 3);
  InterpolatedModel one{{&a}, {1.0}};
  InterpolatedModel two{{&a, &a}, {0.3, 0.7}};
  for (const auto& s : lmaug::testing::toy_corpus(5, 20, 99)) {
    std::vector<std::string> h{"<s>"};
    for (const auto& w : s) {
      double p = std::pow(10.0, a.log10_prob(w, h));
      CHECK(interpolate_prob(one, w, h) == doctest::Approx(p).epsilon(1e-14));
      CHECK(interpolate_prob(two, w, h) == doctest::Approx(p).epsilon(1e-14));
      h.push_back(w);
    }
  }
}

TEST_CASE("equal weights give arithmetic means") {
  auto a = parse_arpa("\\data\\\nngram 1=4\n\n\\1-grams:\n-0.3010300\t</s>\n-99\t<s>\n-1\t<unk>\n-0.3979400\tx\n\n\\end\\\n");
  auto b = parse_arpa("\\data\\\nngram 1=4\n\n\\1-grams:\n-0.6989700\t</s>\n-99\t<s>\n-1\t<unk>\n-0.0969100\tx\n\n\\end\\\n");
  InterpolatedModel mix{{&a, &b}, {0.5, 0.5}};
  // P_a(x) = 0.4, P_b(x) = 0.8; P_a(</s>) = 0.5, P_b(</s>) = 0.2.
  CHECK(interpolate_prob(mix, "x", {"<s>"}) == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(interpolate_prob(mix, "</s>", {"x"}) == doctest::Approx(0.35).epsilon(1e-6));
  CHECK(interpolate_prob(mix, "y", {}) == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("mixture validation") {
  auto a = toy_model(20, 1, 2);
  CHECK_THROWS_AS((InterpolatedModel{{&a}, {0.5}}.validate()), Error);
  CHECK_THROWS_AS((InterpolatedModel{{&a, &a}, {1.0}}.validate()), Error);
  CHECK_THROWS_AS((InterpolatedModel{{&a, &a}, {1.5, -0.5}}.validate()), Error);
  CHECK_THROWS_AS((InterpolatedModel{{}, {}}.validate()), Error);
  CHECK_NOTHROW((InterpolatedModel{{&a, &a}, {0.25, 0.75}}.validate()));
}

TEST_CASE("EM with one component converges immediately") {
  auto a = toy_model(100, 2, 3);
  auto r = optimize_weights_em({&a}, lmaug::testing::toy_corpus(20, 20, 3));
  CHECK(r.iterations == 1);
  CHECK(r.weights == std::vector<double>{1.0});
  CHECK(r.converged);
}

TEST_CASE("EM with identical components stays uniform") {
  auto a = toy_model(100, 2, 3);
  auto r = optimize_weights_em({&a, &a, &a}, lmaug::testing::toy_corpus(20, 20, 3));
  for (double w : r.weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));
  for (double ll : r.log_likelihood) CHECK(ll == doctest::Approx(r.log_likelihood[0]).epsilon(1e-12));
}

TEST_CASE("EM recovers the planted component") {
  auto vocab = shared_vocab(15);
  std::vector<std::string> all = vocab;
  for (const auto& w : vocab) all.push_back("z" + w);
  auto a_train = lmaug::testing::toy_corpus(400, 15, 5);
  auto b_train = relabel(lmaug::testing::toy_corpus(400, 15, 6), "z");
  auto a = estimate_kneser_ney(count_ngrams(a_train, 3, all));
  auto b = estimate_kneser_ney(count_ngrams(b_train, 3, all));
  auto dev = lmaug::testing::toy_corpus(100, 15, 5 + 1000);
  auto r = optimize_weights_em({&a, &b}, dev, 1e-9, 1000);

  // Brute-force maximiser of the dev likelihood on a 0.001 grid.
  double best_l = 0, best_ll = -1e300;
  for (int i = 0; i <= 1000; ++i) {
    double l = i / 1000.0;
    InterpolatedModel mix{{&a, &b}, {l, 1 - l}};
    double ll = 0;
    for (const auto& s : dev) ll += mix.score(s);
    if (ll > best_ll) best_ll = ll, best_l = l;
  }
  CHECK(r.weights[0] >= 0.95);
  CHECK(std::abs(r.weights[0] - best_l) <= 0.05);
}

TEST_CASE("EM is monotone and dominates its components") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(trial);
    std::size_t m = 2 + rng.index(3);
    std::vector<NGramModel> models;
    for (std::size_t i = 0; i < m; ++i)
      models.push_back(toy_model(30 + rng.index(200), trial * 100 + i, 1 + static_cast<int>(rng.index(3))));
    std::vector<const NGramModel*> comps;
    for (const auto& x : models) comps.push_back(&x);
    auto dev = lmaug::testing::toy_corpus(40, 20, trial * 100 + 50);
    auto r = optimize_weights_em(comps, dev);
    double sum = 0;
    for (double w : r.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-12);
    double mix_ppl = perplexity(InterpolatedModel{comps, r.weights}, dev);
    for (const auto* c : comps) CHECK(mix_ppl <= perplexity(*c, dev) + 1e-9);
  }
}

TEST_CASE("EM rejects events nobody can predict") {
  auto a = parse_arpa("\\data\\\nngram 1=3\n\n\\1-grams:\n-0.3\t</s>\n-99\t<s>\n-0.3\tx\n\n\\end\\\n");
  try {
    optimize_weights_em({&a, &a}, {{"x", "q"}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'q'") != std::string::npos);
  }
  CHECK_THROWS_AS(optimize_weights_em({}, {{"x"}}), Error);
  CHECK_THROWS_AS(optimize_weights_em({&a}, {}), Error);
}

TEST_CASE("flatten of one component is the component") {
  auto a = toy_model(200, 7, 4);
  auto flat = flatten(InterpolatedModel{{&a}, {1.0}});
  auto dev = lmaug::testing::toy_corpus(50, 20, 8);
  CHECK(perplexity(flat, dev) == doctest::Approx(perplexity(a, dev)).epsilon(1e-6));
}

TEST_CASE("flattened mixtures normalize and track the exact mixture") {
  auto a = toy_model(300, 11, 3);
  auto b = toy_model(150, 12, 2);
  auto c = estimate_kneser_ney(prune_counts(
      count_ngrams(lmaug::testing::toy_corpus(400, 20, 13), 4, shared_vocab(20)), {1, 2, 2, 2}));
  auto dev = lmaug::testing::toy_corpus(60, 20, 14);
  auto r = optimize_weights_em({&a, &b, &c}, dev);
  InterpolatedModel mix{{&a, &b, &c}, r.weights};
  auto flat = flatten(mix);
  CHECK(flat.order() == 4);
  CHECK(flat.vocab().size() <= 30);
  CHECK(max_normalization_error(flat) < 1e-6);
  auto test = lmaug::testing::toy_corpus(60, 20, 15);
  double exact = perplexity(mix, test), approx = perplexity(flat, test);
  CHECK(std::abs(approx - exact) / exact < 0.02);
  CHECK(to_arpa(parse_arpa(to_arpa(flat))) == to_arpa(flat));
}
