#include "lmaug/filter.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lmaug/error.hpp"

namespace lmaug::filter {

void FilterRuleSet::validate() const {
  if (min_len > max_len) throw Error("filter: min_len exceeds max_len");
  if (max_duplicates < 1) throw Error("filter: max_duplicates must be >= 1");
}

std::string FilterReport::to_text() const {
  return "input=" + std::to_string(input) + "\noutput=" + std::to_string(output) +
         "\nrejected_length=" + std::to_string(rejected_length) +
         "\nrejected_oov=" + std::to_string(rejected_oov) +
         "\nrejected_keyword=" + std::to_string(rejected_keyword) +
         "\nrejected_duplicate=" + std::to_string(rejected_duplicate) + "\n";
}

FilterRuleSet derive_thresholds(const Sentences& in_domain, double low, double high) {
  if (in_domain.empty()) throw Error("derive_thresholds: empty in-domain corpus");
  if (!(low >= 0.0 && low < high && high <= 1.0))
    throw Error("derive_thresholds: quantiles must satisfy 0 <= low < high <= 1");
  std::vector<std::size_t> lengths;
  FilterRuleSet rules;
  rules.vocab.emplace();
  for (const auto& s : in_domain) {
    lengths.push_back(s.size());
    rules.vocab->insert(s.begin(), s.end());
  }
  std::sort(lengths.begin(), lengths.end());
  auto nearest_rank = [&](double q) {
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lengths.size())));
    return lengths[std::clamp<std::size_t>(rank, 1, lengths.size()) - 1];
  };
  rules.min_len = nearest_rank(low);
  rules.max_len = nearest_rank(high);
  return rules;
}

FilterResult apply_filters(const Sentences& sentences, const FilterRuleSet& rules) {
  rules.validate();
  FilterResult r;
  r.report.input = sentences.size();
  std::map<std::vector<std::string>, std::size_t> copies;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (s.size() < rules.min_len || s.size() > rules.max_len) {
      ++r.report.rejected_length;
      continue;
    }
    if (rules.vocab) {
      std::size_t oov = 0;
      for (const auto& w : s) oov += rules.vocab->count(w) == 0;
      if (oov > rules.max_oov_per_sentence) {
        ++r.report.rejected_oov;
        continue;
      }
    }
    bool banned = std::any_of(s.begin(), s.end(), [&](const auto& w) { return rules.banned_keywords.count(w) > 0; });
    bool has_required = rules.required_keywords.empty() ||
                        std::any_of(s.begin(), s.end(), [&](const auto& w) { return rules.required_keywords.count(w) > 0; });
    if (banned || !has_required) {
      ++r.report.rejected_keyword;
      continue;
    }
    if (++copies[s] > rules.max_duplicates) {
      ++r.report.rejected_duplicate;
      continue;
    }
    r.kept.push_back(i);
  }
  r.report.output = r.kept.size();
  return r;
}

}  // namespace lmaug::filter
