#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lmaug::text {

// Splits on runs of ASCII whitespace; empty fields are dropped.
std::vector<std::string> split_words(std::string_view line);

std::string join(const std::vector<std::string>& words, std::string_view sep = " ");

// Splits a UTF-8 string into code-point substrings. Returns nullopt when the
// byte sequence is not valid UTF-8.
std::optional<std::vector<std::string>> utf8_chars(std::string_view s);

std::string_view trim(std::string_view s);

// Reads every line of a file (without trailing '\n' or '\r'). Throws
// lmaug::Error when the file cannot be opened.
std::vector<std::string> read_lines(const std::string& path);

void write_lines(const std::string& path, const std::vector<std::string>& lines);

// 64-bit FNV-1a; used for content-addressed artifact names and RNG stream
// derivation.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

// SplitMix64 finalizer; mixes seeds into well-separated RNG streams.
std::uint64_t mix64(std::uint64_t x);

}  // namespace lmaug::text
