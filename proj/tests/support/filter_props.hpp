#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "lmaug/filter.hpp"
#include "lmaug/random.hpp"

namespace lmaug::testing {

// Random sentences over in-vocabulary words "w*" and OOV words "x*", with a
// share drawn from a small pool so duplicates are common.
inline filter::Sentences random_filter_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto make = [&] {
    std::vector<std::string> s(rng.index(21));
    for (auto& w : s) w = (rng.uniform() < 0.1 ? "x" : "w") + std::to_string(rng.index(40));
    return s;
  };
  filter::Sentences pool;
  for (int i = 0; i < 50; ++i) pool.push_back(make());
  filter::Sentences out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.uniform() < 0.3 ? pool[rng.index(pool.size())] : make());
  return out;
}

inline filter::FilterRuleSet random_rules(Rng& rng) {
  filter::FilterRuleSet r;
  r.min_len = rng.index(6);
  r.max_len = r.min_len + rng.index(20);
  if (rng.uniform() < 0.8) {
    r.vocab.emplace();
    for (int i = 0; i < 40; ++i)
      if (rng.uniform() < 0.9) r.vocab->insert("w" + std::to_string(i));
  }
  r.max_oov_per_sentence = rng.index(3);
  if (rng.uniform() < 0.5) r.required_keywords = {"w" + std::to_string(rng.index(40)), "w" + std::to_string(rng.index(40))};
  if (rng.uniform() < 0.5) r.banned_keywords = {"w" + std::to_string(rng.index(40))};
  r.max_duplicates = rng.uniform() < 0.7 ? 1 + rng.index(3) : filter::kUnlimited;
  return r;
}

inline filter::Sentences select(const filter::Sentences& s, const std::vector<std::size_t>& idx) {
  filter::Sentences out;
  for (auto i : idx) out.push_back(s[i]);
  return out;
}

inline bool sub_multiset(const filter::Sentences& small, const filter::Sentences& big) {
  std::map<std::vector<std::string>, long> c;
  for (const auto& s : big) ++c[s];
  for (const auto& s : small)
    if (--c[s] < 0) return false;
  return true;
}

// Returns a description of every violated property (empty when all hold):
// order-preserving sub-multiset output, report conservation, idempotence and
// monotonicity under relaxing each threshold in turn.
inline std::vector<std::string> filter_property_violations(const filter::Sentences& corpus,
                                                           const filter::FilterRuleSet& rules) {
  std::vector<std::string> bad;
  auto r = filter::apply_filters(corpus, rules);
  auto out = select(corpus, r.kept);
  if (!std::is_sorted(r.kept.begin(), r.kept.end()) ||
      std::adjacent_find(r.kept.begin(), r.kept.end()) != r.kept.end())
    bad.push_back("output does not preserve input order");
  if (!sub_multiset(out, corpus)) bad.push_back("output is not a sub-multiset of input");
  if (r.report.input != r.report.output + r.report.rejected() || r.report.output != out.size())
    bad.push_back("report does not conserve counts");
  auto again = filter::apply_filters(out, rules);
  if (again.kept.size() != out.size()) bad.push_back("filter is not idempotent");

  std::vector<std::pair<std::string, filter::FilterRuleSet>> relaxed;
  auto add = [&](const std::string& name, auto&& edit) {
    auto x = rules;
    edit(x);
    relaxed.emplace_back(name, x);
  };
  if (rules.min_len > 0) add("min_len", [](auto& x) { --x.min_len; });
  if (rules.max_len != filter::kUnlimited) add("max_len", [](auto& x) { ++x.max_len; });
  add("max_oov", [](auto& x) { ++x.max_oov_per_sentence; });
  if (rules.vocab) add("vocab", [](auto& x) { x.vocab->insert("x1"); });
  if (!rules.required_keywords.empty()) add("required", [](auto& x) { x.required_keywords.insert("w7"); });
  if (!rules.banned_keywords.empty())
    add("banned", [](auto& x) { x.banned_keywords.erase(x.banned_keywords.begin()); });
  if (rules.max_duplicates != filter::kUnlimited) add("max_duplicates", [](auto& x) { ++x.max_duplicates; });
  for (const auto& [name, x] : relaxed) {
    auto more = select(corpus, filter::apply_filters(corpus, x).kept);
    if (!sub_multiset(out, more)) bad.push_back("relaxing " + name + " shrank the output");
  }
  return bad;
}

}  // namespace lmaug::testing
