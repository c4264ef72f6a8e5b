#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lmaug::filter {

using Sentences = std::vector<std::vector<std::string>>;

constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

struct FilterRuleSet {
  std::size_t min_len = 0;  // words
  std::size_t max_len = kUnlimited;
  // No OOV check when unset.
  std::optional<std::set<std::string>> vocab;
  std::size_t max_oov_per_sentence = 0;
  // When non-empty, a sentence must contain at least one of these.
  std::set<std::string> required_keywords;
  std::set<std::string> banned_keywords;
  std::size_t max_duplicates = kUnlimited;

  void validate() const;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t rejected_length = 0;
  std::size_t rejected_oov = 0;
  std::size_t rejected_keyword = 0;
  std::size_t rejected_duplicate = 0;

  std::size_t rejected() const {
    return rejected_length + rejected_oov + rejected_keyword + rejected_duplicate;
  }
  // "key=value" lines.
  std::string to_text() const;
};

struct FilterResult {
  std::vector<std::size_t> kept;  // input indices, in input order
  FilterReport report;
};

// Nearest-rank quantiles of sentence word lengths (rank = ceil(q * N),
// at least 1) and the full in-domain word vocabulary.
FilterRuleSet derive_thresholds(const Sentences& in_domain, double low = 0.01, double high = 0.99);

// Rules run in the order length, OOV, keyword, duplicates; a rejected
// sentence is charged to the first rule it fails. The duplicate rule keeps
// the first max_duplicates copies of each distinct word sequence.
FilterResult apply_filters(const Sentences& sentences, const FilterRuleSet& rules);

}  // namespace lmaug::filter
