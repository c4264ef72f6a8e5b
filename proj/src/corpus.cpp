#include "lmaug/corpus.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "lmaug/error.hpp"
#include "lmaug/random.hpp"
#include "lmaug/text.hpp"

namespace lmaug {

std::size_t Corpus::total_words() const {
  return std::accumulate(word_counts.begin(), word_counts.end(), std::size_t{0});
}

Corpus make_corpus(const std::vector<std::string>& lines, const BpeModel& bpe,
                   const std::string& source) {
  Corpus c;
  c.source = source;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto words = text::split_words(lines[ln]);
    if (words.empty()) continue;
    if (!text::utf8_chars(lines[ln])) throw ParseError(source, ln + 1, "invalid UTF-8");
    auto ids = bpe.encode(lines[ln]);
    c.token_count += ids.size();
    c.word_counts.push_back(words.size());
    c.sentences.push_back(std::move(ids));
  }
  return c;
}

Corpus load_corpus(const std::string& path, const BpeModel& bpe) {
  return make_corpus(text::read_lines(path), bpe, path);
}

std::vector<std::vector<std::string>> to_word_sentences(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    auto w = text::split_words(l);
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::vector<std::string>> load_word_sentences(const std::string& path) {
  return to_word_sentences(text::read_lines(path));
}

PrefixCorpus extract_prefixes(const Corpus& corpus, const std::set<int>& k_values,
                              std::size_t max_per_k, std::uint64_t seed) {
  if (k_values.empty()) throw Error("extract_prefixes: k_values must be non-empty");
  if (*k_values.begin() < 1) throw Error("extract_prefixes: k must be positive");

  PrefixCorpus out;
  out.k_values = k_values;
  const auto min_k = static_cast<std::size_t>(*k_values.begin());
  bool any_long_enough = false;
  for (const auto& s : corpus.sentences) {
    if (s.size() >= min_k + 2) any_long_enough = true;
  }
  if (!any_long_enough) {
    throw Error("extract_prefixes: no sentence has at least " + std::to_string(min_k) +
                " tokens");
  }

  for (int k : k_values) {
    const auto uk = static_cast<std::size_t>(k);
    std::set<std::vector<TokenId>> distinct;
    for (const auto& s : corpus.sentences) {
      // s = <s> w1 .. wn </s>; prefix covers w1..wk.
      if (s.size() < uk + 2) continue;
      distinct.emplace(s.begin() + 1, s.begin() + 1 + static_cast<std::ptrdiff_t>(uk));
    }
    std::vector<std::vector<TokenId>> candidates(distinct.begin(), distinct.end());
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    rng.shuffle(candidates);
    if (candidates.size() > max_per_k) candidates.resize(max_per_k);
    for (auto& p : candidates) {
      out.prefixes.push_back(std::move(p));
      out.k.push_back(k);
    }
  }
  return out;
}

void save_prefixes(const PrefixCorpus& prefixes, const BpeModel& bpe, const std::string& path) {
  std::vector<std::string> lines;
  std::vector<std::string> sidecar;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    lines.push_back(bpe.decode(prefixes.prefixes[i]));
    std::ostringstream os;
    os << prefixes.k[i] << '\t';
    for (std::size_t j = 0; j < prefixes.prefixes[i].size(); ++j) {
      if (j) os << ' ';
      os << prefixes.prefixes[i][j];
    }
    sidecar.push_back(os.str());
  }
  text::write_lines(path, lines);
  text::write_lines(path + ".k", sidecar);
}

PrefixCorpus load_prefixes(const std::string& path) {
  PrefixCorpus out;
  const auto sidecar = text::read_lines(path + ".k");
  for (std::size_t ln = 0; ln < sidecar.size(); ++ln) {
    const auto tab = sidecar[ln].find('\t');
    if (tab == std::string::npos) throw ParseError(path + ".k", ln + 1, "expected k<TAB>ids");
    std::vector<TokenId> ids;
    int k = 0;
    try {
      k = std::stoi(sidecar[ln].substr(0, tab));
      for (const auto& w : text::split_words(sidecar[ln].substr(tab + 1))) {
        ids.push_back(static_cast<TokenId>(std::stol(w)));
      }
    } catch (const std::exception&) {
      throw ParseError(path + ".k", ln + 1, "non-numeric field");
    }
    if (static_cast<std::size_t>(k) != ids.size()) {
      throw ParseError(path + ".k", ln + 1, "k does not match token count");
    }
    out.prefixes.push_back(std::move(ids));
    out.k.push_back(k);
    out.k_values.insert(k);
  }
  return out;
}

}  // namespace lmaug
