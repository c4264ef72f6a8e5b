#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lmaug::bench {

// Two-domain synthetic text: a broad "general" template mixture and a narrow
// voice-assistant sub-grammar, sharing large slot-filler lexicons (names,
// cities, artists, songs, foods) drawn with Zipfian frequencies.
struct BenchmarkConfig {
  std::size_t general_sentences = 200000;
  std::size_t train_sentences = 2000;
  std::size_t dev_sentences = 500;
  std::size_t test_sentences = 1000;
  std::uint64_t seed = 1;
  // The lexicon is fixed by its own seed so that corpora drawn with different
  // `seed` values share words.
  std::uint64_t lexicon_seed = 7;
};

struct BenchmarkData {
  std::vector<std::string> general;
  std::vector<std::string> train;
  std::vector<std::string> dev;  // no sentence of dev or test occurs in train
  std::vector<std::string> test;
};

BenchmarkData make_benchmark(const BenchmarkConfig& cfg);

// Writes general.txt, train.txt, dev.txt, test.txt under `dir` (created).
void write_benchmark(const BenchmarkData& data, const std::string& dir);

}  // namespace lmaug::bench
