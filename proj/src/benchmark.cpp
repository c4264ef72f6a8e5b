#include "lmaug/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <unordered_set>

#include "lmaug/error.hpp"
#include "lmaug/random.hpp"
#include "lmaug/text.hpp"

namespace lmaug::bench {

namespace {

struct Slot {
  std::vector<std::string> words;
  std::vector<double> cdf;  // Zipf(1) over list position

  void finish() {
    double acc = 0.0;
    for (std::size_t i = 0; i < words.size(); ++i) {
      acc += 1.0 / static_cast<double>(i + 1);
      cdf.push_back(acc);
    }
    for (double& c : cdf) c /= acc;
  }

  const std::string& draw(Rng& rng) const {
    auto it = std::lower_bound(cdf.begin(), cdf.end(), rng.uniform());
    return words[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), words.size() - 1)];
  }
};

struct Template {
  std::string pattern;
  double weight;
};

class Grammar {
 public:
  explicit Grammar(std::uint64_t lexicon_seed) {
    Rng rng(lexicon_seed);
    std::unordered_set<std::string> taken;
    for (const auto& [name, words] : fixed_lists()) {
      for (const auto& w : words) taken.insert(w);
      add(name, words);
    }
    const std::vector<std::pair<std::string, std::size_t>> invented{
        {"name", 800}, {"city", 600}, {"artist", 400}, {"songword", 300}, {"food", 300}};
    for (const auto& [name, n] : invented) {
      std::vector<std::string> words;
      while (words.size() < n) {
        std::string w = invent(rng, name == "city" ? 3 : 2);
        if (taken.insert(w).second) words.push_back(w);
      }
      add(name, words);
    }
  }

  std::string expand(const std::string& pattern, Rng& rng) const {
    std::string out;
    for (std::size_t i = 0; i < pattern.size();) {
      if (pattern[i] != '{') {
        out += pattern[i++];
        continue;
      }
      std::size_t close = pattern.find('}', i);
      std::string slot = pattern.substr(i + 1, close - i - 1);
      if (slot == "song") {
        out += slots_.at("songword").draw(rng);
        if (rng.uniform() < 0.4) out += " " + slots_.at("songword").draw(rng);
      } else {
        out += slots_.at(slot).draw(rng);
      }
      i = close + 1;
    }
    return out;
  }

 private:
  void add(const std::string& name, const std::vector<std::string>& words) {
    Slot s;
    s.words = words;
    s.finish();
    slots_[name] = std::move(s);
  }

  static std::string invent(Rng& rng, int max_syllables) {
    static const std::vector<std::string> onsets{"b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h", "j", "k",
                                                 "l", "m", "n", "p", "pl", "r", "s", "sh", "st", "t", "tr", "v", "w", "z"};
    static const std::vector<std::string> vowels{"a", "e", "i", "o", "u", "ai", "ea", "ou"};
    static const std::vector<std::string> codas{"", "", "", "n", "r", "l", "s", "m", "nd", "th"};
    std::string w;
    int n = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_syllables - 1)));
    for (int i = 0; i < n; ++i) {
      w += onsets[rng.index(onsets.size())];
      w += vowels[rng.index(vowels.size())];
      if (i + 1 == n || rng.uniform() < 0.3) w += codas[rng.index(codas.size())];
    }
    return w;
  }

  static std::vector<std::pair<std::string, std::vector<std::string>>> fixed_lists() {
    return {
        {"hour", {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve"}},
        {"minute", {"fifteen", "thirty", "forty five", "ten", "twenty", "fifty"}},
        {"ampm", {"am", "pm"}},
        {"day", {"today", "tomorrow", "tonight", "monday", "tuesday", "wednesday", "thursday", "friday",
                 "saturday", "sunday", "this weekend"}},
        {"month", {"january", "february", "march", "april", "may", "june", "july", "august", "september",
                   "october", "november", "december"}},
        {"season", {"summer", "winter", "spring", "autumn"}},
        {"daypart", {"morning", "afternoon", "evening", "night", "day"}},
        {"device", {"phone", "laptop", "tablet", "watch", "speaker", "computer"}},
        {"room", {"kitchen", "bedroom", "garage", "office", "hallway", "basement", "bathroom", "garden"}},
        {"genre", {"jazz", "rock", "pop", "classical", "country", "blues", "folk", "metal", "reggae", "soul",
                   "techno", "punk"}},
        {"onoff", {"on", "off"}},
        {"number", {"eighteen", "nineteen", "twenty", "twenty one", "twenty two", "twenty three", "sixteen",
                    "seventeen"}},
        {"adj", {"big", "small", "old", "new", "quiet", "busy", "cold", "warm", "sunny", "rainy", "strange",
                 "lovely", "empty", "bright", "dark", "famous", "cheap", "expensive", "broken", "clean", "noisy",
                 "friendly", "boring", "huge", "tiny", "wet", "dry", "beautiful", "crowded", "modern"}},
        {"noun", {"house", "car", "book", "letter", "garden", "bridge", "river", "station", "market", "school",
                  "table", "window", "dog", "cat", "bicycle", "ticket", "museum", "hotel", "restaurant", "park",
                  "street", "shop", "bottle", "picture", "jacket", "bag", "key", "door", "road", "festival"}},
        {"verb", {"found", "painted", "sold", "bought", "cleaned", "fixed", "visited", "watched", "opened",
                  "closed", "moved", "borrowed", "lost", "liked", "photographed", "described", "carried",
                  "forgot", "noticed", "repaired"}},
    };
  }

  std::map<std::string, Slot> slots_;
};

const std::vector<Template>& in_domain_templates() {
  static const std::vector<Template> t{
      {"play {song} by {artist}", 6},
      {"play {song}", 3},
      {"play some {genre} music", 2},
      {"play the latest album by {artist}", 2},
      {"who sings {song}", 1},
      {"set an alarm for {hour} {ampm}", 4},
      {"set an alarm for {hour} {minute} {ampm} {day}", 2},
      {"wake me up at {hour} {ampm} {day}", 2},
      {"what is the weather in {city} {day}", 5},
      {"will it rain in {city} {day}", 2},
      {"call {name} on my {device}", 3},
      {"call {name}", 3},
      {"send a message to {name} saying i am on my way", 2},
      {"text {name} that i will be late", 2},
      {"remind me to buy {food} at {hour} {ampm}", 2},
      {"add {food} and {food} to my shopping list", 2},
      {"add {food} to my shopping list", 2},
      {"navigate to {city}", 3},
      {"how long does it take to drive from {city} to {city}", 2},
      {"turn {onoff} the lights in the {room}", 2},
      {"set the {room} temperature to {number} degrees", 1},
  };
  return t;
}

const std::vector<Template>& general_templates() {
  static const std::vector<Template> t{
      {"{name} moved to {city} last {season}", 3},
      {"{name} and {name} visited {city} in {month}", 3},
      {"the weather in {city} was {adj} on {day}", 3},
      {"it will rain in {city} {day} according to the news", 2},
      {"{artist} released a new song called {song}", 3},
      {"i listened to {song} by {artist} all {daypart}", 3},
      {"my favourite {genre} band is {artist}", 2},
      {"{artist} played {song} at the festival in {city}", 2},
      {"{name} called me from {city} at {hour} {ampm}", 3},
      {"{name} sent me a message about the {noun}", 2},
      {"we had {food} and {food} for dinner", 3},
      {"{name} bought some {food} at the market", 3},
      {"the recipe needs {food} {food} and a little {food}", 2},
      {"the train from {city} to {city} leaves at {hour} {minute} {ampm}", 3},
      {"my alarm rang at {hour} {ampm} this {daypart}", 2},
      {"the meeting with {name} starts at {hour} {ampm} on {day}", 2},
      {"{name} left the {device} in the {room}", 2},
      {"the {adj} {noun} is in the {room}", 3},
      {"{name} {verb} the {adj} {noun} yesterday", 4},
      {"the {noun} near the {room} looks {adj}", 2},
      {"do you know where {name} put the {noun}", 2},
      {"i think {artist} played in {city} last {month}", 2},
      {"there is a {adj} {noun} in {city}", 3},
      {"she told {name} that the {noun} was {adj}", 2},
      {"he drove from {city} to {city} on {day}", 3},
      {"please remember to bring {food} {day}", 2},
      {"can you believe {name} likes {genre} music", 2},
      {"the {adj} {noun} in {city} {verb} a {noun}", 2},
      {"{name} lives in {city} with a {adj} {noun}", 3},
      {"the shop in {city} sells {food} and {noun}s", 2},
      {"it is {adj} and {adj} in {city} this {season}", 2},
      {"{name} turned the music {onoff} in the {room}", 1},
      {"the {room} was {number} degrees at {hour} {ampm}", 1},
      {"they say {song} is the best song by {artist}", 2},
      {"{name} was late because of the {adj} {noun}", 2},
      {"a {adj} {noun} {verb} the {noun} near {city}", 2},
  };
  return t;
}

std::string draw(const Grammar& g, const std::vector<Template>& ts, double total, Rng& rng) {
  double u = rng.uniform() * total;
  for (const auto& t : ts) {
    if (u < t.weight) return g.expand(t.pattern, rng);
    u -= t.weight;
  }
  return g.expand(ts.back().pattern, rng);
}

double total_weight(const std::vector<Template>& ts) {
  double s = 0.0;
  for (const auto& t : ts) s += t.weight;
  return s;
}

}  // namespace

BenchmarkData make_benchmark(const BenchmarkConfig& cfg) {
  Grammar g(cfg.lexicon_seed);
  BenchmarkData d;
  Rng general_rng(derive_seed(cfg.seed, 1));
  const double gw = total_weight(general_templates());
  d.general.reserve(cfg.general_sentences);
  for (std::size_t i = 0; i < cfg.general_sentences; ++i)
    d.general.push_back(draw(g, general_templates(), gw, general_rng));

  Rng in_rng(derive_seed(cfg.seed, 2));
  const double iw = total_weight(in_domain_templates());
  std::unordered_set<std::string> train_set;
  for (std::size_t i = 0; i < cfg.train_sentences; ++i) {
    d.train.push_back(draw(g, in_domain_templates(), iw, in_rng));
    train_set.insert(d.train.back());
  }
  auto held_out = [&](std::size_t n, std::vector<std::string>& out) {
    std::size_t attempts = 0;
    while (out.size() < n) {
      if (++attempts > 100 * n + 1000) throw Error("benchmark: cannot draw enough held-out sentences");
      std::string s = draw(g, in_domain_templates(), iw, in_rng);
      if (!train_set.count(s)) out.push_back(std::move(s));
    }
  };
  held_out(cfg.dev_sentences, d.dev);
  held_out(cfg.test_sentences, d.test);
  return d;
}

void write_benchmark(const BenchmarkData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  text::write_lines(dir + "/general.txt", data.general);
  text::write_lines(dir + "/train.txt", data.train);
  text::write_lines(dir + "/dev.txt", data.dev);
  text::write_lines(dir + "/test.txt", data.test);
}

}  // namespace lmaug::bench
