#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lmaug/error.hpp"
#include "lmaug/ngram.hpp"
#include "lmaug/text.hpp"

namespace lmaug::ngram {

namespace {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.7f", v);
  return buf;
}

bool rounds_to_zero(const std::string& s) { return s == "0.0000000" || s == "-0.0000000"; }

double parse_number(std::string_view s, const std::string& source, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError(source, line, "invalid number '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::string to_arpa(const NGramModel& model) {
  std::string out = "\n\\data\\\n";
  for (int k = 1; k <= model.order(); ++k)
    out += "ngram " + std::to_string(k) + "=" + std::to_string(model.grams(k).size()) + "\n";
  for (int k = 1; k <= model.order(); ++k) {
    out += "\n\\" + std::to_string(k) + "-grams:\n";
    std::vector<std::pair<std::vector<std::string>, const Entry*>> rows;
    rows.reserve(model.grams(k).size());
    for (const auto& [key, e] : model.grams(k)) {
      std::vector<std::string> words;
      for (WordId id : unpack(key, k)) words.push_back(model.vocab().word(id));
      rows.emplace_back(std::move(words), &e);
    }
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [words, e] : rows) {
      out += format_number(e->log_prob);
      out += '\t';
      out += text::join(words);
      // A backoff that prints as zero is omitted so that re-reading and
      // re-writing reproduces the file.
      std::string bo = format_number(e->log_backoff);
      if (k < model.order() && !rounds_to_zero(bo)) {
        out += '\t';
        out += bo;
      }
      out += '\n';
    }
  }
  out += "\n\\end\\\n";
  return out;
}

void write_arpa(const NGramModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << to_arpa(model);
  if (!out) throw Error("failed writing " + path);
}

NGramModel parse_arpa(const std::string& text_in, const std::string& source) {
  std::istringstream in(text_in);
  std::string raw;
  std::size_t line_no = 0;
  auto next = [&](std::string& line) {
    while (std::getline(in, raw)) {
      ++line_no;
      auto t = text::trim(raw);
      if (!t.empty()) {
        line.assign(t);
        return true;
      }
    }
    return false;
  };

  std::string line;
  if (!next(line) || line != "\\data\\") throw ParseError(source, line_no, "expected \\data\\");
  std::vector<std::size_t> declared;
  while (true) {
    if (!next(line)) throw ParseError(source, line_no, "unexpected end of file in header");
    if (line.rfind("ngram ", 0) != 0) break;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "malformed ngram count line");
    int k = static_cast<int>(parse_number(text::trim(std::string_view(line).substr(6, eq - 6)), source, line_no));
    if (k != static_cast<int>(declared.size()) + 1)
      throw ParseError(source, line_no, "ngram counts out of sequence");
    double n = parse_number(text::trim(std::string_view(line).substr(eq + 1)), source, line_no);
    if (n < 0) throw ParseError(source, line_no, "negative ngram count");
    declared.push_back(static_cast<std::size_t>(n));
  }
  if (declared.empty()) throw ParseError(source, line_no, "no ngram counts in header");
  if (declared.size() > static_cast<std::size_t>(kMaxOrder))
    throw ParseError(source, line_no, "order exceeds " + std::to_string(kMaxOrder));

  int order = static_cast<int>(declared.size());
  NGramModel model(order, Vocab{});
  for (int k = 1; k <= order; ++k) {
    std::string expect = "\\" + std::to_string(k) + "-grams:";
    if (line != expect) throw ParseError(source, line_no, "expected " + expect);
    std::size_t seen = 0;
    auto& level = model.grams(k);
    while (next(line) && line[0] != '\\') {
      auto fields = text::split_words(line);
      std::size_t want = static_cast<std::size_t>(k) + 1;
      if (fields.size() != want && !(k < order && fields.size() == want + 1))
        throw ParseError(source, line_no,
                         "expected " + std::to_string(k) + " words in " + std::to_string(k) + "-gram entry");
      Entry e;
      e.log_prob = parse_number(fields[0], source, line_no);
      if (fields.size() == want + 1) e.log_backoff = parse_number(fields.back(), source, line_no);
      std::vector<WordId> ids;
      for (int i = 1; i <= k; ++i) ids.push_back(model.vocab().add(fields[static_cast<std::size_t>(i)]));
      if (!level.emplace(pack(ids), e).second)
        throw ParseError(source, line_no, "duplicate " + std::to_string(k) + "-gram");
      ++seen;
    }
    if (seen != declared[static_cast<std::size_t>(k - 1)])
      throw ParseError(source, line_no,
                       std::to_string(k) + "-gram section has " + std::to_string(seen) +
                           " entries, header declares " +
                           std::to_string(declared[static_cast<std::size_t>(k - 1)]));
  }
  if (line != "\\end\\") throw ParseError(source, line_no, "expected \\end\\");
  return model;
}

NGramModel read_arpa(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_arpa(ss.str(), path);
}

}  // namespace lmaug::ngram
