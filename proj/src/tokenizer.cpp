#include "lmaug/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>

#include "lmaug/error.hpp"
#include "lmaug/text.hpp"

namespace lmaug {

namespace {

std::string pair_key(std::string_view a, std::string_view b) {
  std::string k;
  k.reserve(a.size() + b.size() + 1);
  k.append(a);
  k.push_back(' ');
  k.append(b);
  return k;
}

bool contains_boundary(std::string_view s) {
  return s.find(BpeModel::kBoundary) != std::string_view::npos;
}

// A word type during learning: symbol ids into a local table plus frequency.
struct WordType {
  std::vector<int> symbols;
  long freq = 0;
};

}  // namespace

BpeModel BpeModel::learn(const std::vector<std::string>& lines, int num_merges) {
  if (num_merges < 0) throw Error("num_merges must be non-negative");

  // Word types keyed by their initial symbol sequence (joined with '\x01').
  std::map<std::string, std::pair<std::vector<std::string>, long>> type_counts;
  bool any = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto words = text::split_words(lines[ln]);
    if (words.empty()) continue;
    any = true;
    for (std::size_t w = 0; w < words.size(); ++w) {
      auto chars = text::utf8_chars(words[w]);
      if (!chars) throw ParseError("corpus", ln + 1, "invalid UTF-8");
      if (contains_boundary(words[w])) {
        throw ParseError("corpus", ln + 1, "reserved boundary symbol U+2581 in input");
      }
      if (w + 1 < words.size()) chars->back() += kBoundary;
      std::string key;
      for (const auto& c : *chars) {
        key += c;
        key.push_back('\x01');
      }
      auto& slot = type_counts[key];
      if (slot.second == 0) slot.first = std::move(*chars);
      ++slot.second;
    }
  }
  if (!any) throw Error("cannot learn BPE from an empty corpus");

  // Local symbol table for learning.
  std::vector<std::string> table;
  std::unordered_map<std::string, int> table_ids;
  auto intern = [&](const std::string& s) {
    auto it = table_ids.find(s);
    if (it != table_ids.end()) return it->second;
    const int id = static_cast<int>(table.size());
    table.push_back(s);
    table_ids.emplace(s, id);
    return id;
  };

  std::vector<WordType> types;
  types.reserve(type_counts.size());
  for (auto& [key, entry] : type_counts) {
    WordType t;
    t.freq = entry.second;
    for (const auto& c : entry.first) t.symbols.push_back(intern(c));
    types.push_back(std::move(t));
  }

  BpeModel model;
  std::vector<std::string> base(table.begin(), table.end());
  base.push_back(std::string(kBoundary));
  std::sort(base.begin(), base.end());
  base.erase(std::unique(base.begin(), base.end()), base.end());
  for (auto s : {kPad, kStart, kEnd, kUnk}) model.add_symbol(std::string(s));
  for (const auto& s : base) model.add_symbol(s);

  for (int m = 0; m < num_merges; ++m) {
    std::unordered_map<std::uint64_t, long> pair_counts;
    for (const auto& t : types) {
      for (std::size_t i = 0; i + 1 < t.symbols.size(); ++i) {
        const auto key = (static_cast<std::uint64_t>(t.symbols[i]) << 32) |
                         static_cast<std::uint32_t>(t.symbols[i + 1]);
        pair_counts[key] += t.freq;
      }
    }
    long best_count = 1;
    int best_a = -1;
    int best_b = -1;
    for (const auto& [key, count] : pair_counts) {
      const int a = static_cast<int>(key >> 32);
      const int b = static_cast<int>(key & 0xffffffffU);
      if (count < best_count) continue;
      if (count > best_count || best_a < 0 ||
          std::tie(table[a], table[b]) < std::tie(table[best_a], table[best_b])) {
        if (count < 2) continue;
        best_count = count;
        best_a = a;
        best_b = b;
      }
    }
    if (best_a < 0) break;

    const std::string merged = table[best_a] + table[best_b];
    const int merged_id = intern(merged);
    model.merges_.emplace_back(table[best_a], table[best_b]);
    model.add_symbol(merged);

    for (auto& t : types) {
      auto& s = t.symbols;
      std::size_t out = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best_a && s[i + 1] == best_b) {
          s[out++] = merged_id;
          ++i;
        } else {
          s[out++] = s[i];
        }
      }
      s.resize(out);
    }
  }
  model.build_index();
  return model;
}

void BpeModel::add_symbol(const std::string& s) {
  if (ids_.count(s)) return;
  ids_.emplace(s, static_cast<TokenId>(symbols_.size()));
  symbols_.push_back(s);
}

void BpeModel::build_index() {
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto key = pair_key(merges_[r].first, merges_[r].second);
    if (!merge_rank_.emplace(key, r).second) {
      throw Error("duplicate merge rule: " + key);
    }
  }
  specials_ = SpecialIds{id(kPad), id(kStart), id(kEnd), id(kUnk)};
}

TokenId BpeModel::id(std::string_view symbol) const {
  auto it = ids_.find(std::string(symbol));
  return it == ids_.end() ? -1 : it->second;
}

const std::string& BpeModel::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw Error("token id out of range: " + std::to_string(id));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

void BpeModel::encode_word(const std::vector<std::string>& chars, bool final_word,
                           std::vector<TokenId>& out) const {
  std::vector<std::string> syms(chars.begin(), chars.end());
  bool split_boundary = false;
  if (!final_word) {
    std::string tagged = syms.back() + std::string(kBoundary);
    if (ids_.count(tagged)) {
      syms.back() = std::move(tagged);
    } else {
      split_boundary = true;
    }
  }

  while (syms.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const auto& [a, b] = merges_[best_rank];
    std::vector<std::string> next;
    next.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
        next.push_back(a + b);
        ++i;
      } else {
        next.push_back(std::move(syms[i]));
      }
    }
    syms = std::move(next);
  }

  for (const auto& s : syms) {
    auto it = ids_.find(s);
    out.push_back(it == ids_.end() ? specials_.unk : it->second);
  }
  if (split_boundary) out.push_back(id(kBoundary));
}

std::vector<TokenId> BpeModel::encode_impl(std::string_view input, bool partial) const {
  std::vector<TokenId> out;
  const bool trailing_space =
      partial && !input.empty() && (input.back() == ' ' || input.back() == '\t');
  const auto words = text::split_words(input);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const bool final_word = (w + 1 == words.size()) && !trailing_space;
    auto chars = text::utf8_chars(words[w]);
    if (!chars) {
      out.push_back(specials_.unk);
      if (!final_word) out.push_back(id(kBoundary));
      continue;
    }
    for (auto& c : *chars) {
      if (c == kBoundary) c = std::string(kUnk);
    }
    encode_word(*chars, final_word, out);
  }
  return out;
}

std::vector<TokenId> BpeModel::encode(std::string_view text) const {
  std::vector<TokenId> out{specials_.start};
  auto body = encode_impl(text, false);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(specials_.end);
  return out;
}

std::vector<TokenId> BpeModel::encode_partial(std::string_view text) const {
  return encode_impl(text, true);
}

std::string BpeModel::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= symbols_.size()) {
      throw Error("token id " + std::to_string(t) + " out of range at position " +
                  std::to_string(i));
    }
    if (t == specials_.pad || t == specials_.start || t == specials_.end) continue;
    out += symbols_[static_cast<std::size_t>(t)];
  }
  std::string result;
  result.reserve(out.size());
  for (std::size_t i = 0; i < out.size();) {
    if (out.compare(i, kBoundary.size(), kBoundary) == 0) {
      result.push_back(' ');
      i += kBoundary.size();
    } else {
      result.push_back(out[i++]);
    }
  }
  return result;
}

void BpeModel::save(const std::string& merges_path, const std::string& vocab_path) const {
  std::vector<std::string> merge_lines;
  merge_lines.reserve(merges_.size());
  for (const auto& [a, b] : merges_) merge_lines.push_back(a + " " + b);
  text::write_lines(merges_path, merge_lines);

  std::vector<std::string> vocab_lines;
  vocab_lines.reserve(symbols_.size());
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    vocab_lines.push_back(symbols_[i] + "\t" + std::to_string(i));
  }
  text::write_lines(vocab_path, vocab_lines);
}

BpeModel BpeModel::load(const std::string& merges_path, const std::string& vocab_path) {
  BpeModel model;
  const auto vocab_lines = text::read_lines(vocab_path);
  for (std::size_t ln = 0; ln < vocab_lines.size(); ++ln) {
    const auto& line = vocab_lines[ln];
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(vocab_path, ln + 1, "expected subword<TAB>id");
    const std::string sym = line.substr(0, tab);
    long id = -1;
    try {
      id = std::stol(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(vocab_path, ln + 1, "non-numeric id");
    }
    if (id != static_cast<long>(ln)) throw ParseError(vocab_path, ln + 1, "ids must be contiguous from 0");
    if (model.ids_.count(sym)) throw ParseError(vocab_path, ln + 1, "duplicate subword " + sym);
    model.add_symbol(sym);
  }
  for (auto s : {kPad, kStart, kEnd, kUnk}) {
    if (model.id(s) < 0) throw Error(vocab_path + ": missing special symbol " + std::string(s));
  }

  const auto merge_lines = text::read_lines(merges_path);
  for (std::size_t ln = 0; ln < merge_lines.size(); ++ln) {
    const auto parts = text::split_words(merge_lines[ln]);
    if (parts.size() != 2) throw ParseError(merges_path, ln + 1, "expected 'left right'");
    if (model.id(parts[0] + parts[1]) < 0) {
      throw ParseError(merges_path, ln + 1, "merged symbol missing from vocab");
    }
    model.merges_.emplace_back(parts[0], parts[1]);
  }
  model.build_index();
  return model;
}

}  // namespace lmaug
