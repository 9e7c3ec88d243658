#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace unist::text {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kBlank = 4;
inline constexpr int kNumSpecials = 5;

// Trailing symbol of every word before merging; merged tokens carry it as a
// suffix, and decoding turns it back into a space.
inline constexpr std::string_view kEndOfWord = "</w>";

using MergePair = std::pair<std::string, std::string>;

// Joint subword vocabulary shared by all languages. IDs 0-4 are the
// specials; the remaining IDs are symbols in the order they were created.
class Vocabulary {
 public:
  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  // kUnk when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<MergePair>& merges() const { return merges_; }
  // Lower is earlier; -1 when the pair was never merged.
  int merge_rank(const std::string& left, const std::string& right) const;

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  int add_token(std::string token);
  void add_merge(MergePair pair);

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::string_view contents);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && merges_ == other.merges_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<MergePair> merges_;
  std::unordered_map<std::string, int> merge_index_;
};

// Greedy byte-pair merging over whitespace-delimited words. The most frequent
// adjacent pair is merged until the vocabulary reaches target_size or no pair
// occurs at least twice; ties go to the lexicographically smallest pair.
Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size);

std::vector<int> encode(std::string_view text, const Vocabulary& vocab);
// Throws std::out_of_range on an ID outside the vocabulary.
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

// Splits a UTF-8 string into code points (invalid bytes are kept singly).
std::vector<std::string> utf8_chars(std::string_view s);
std::vector<std::string> split_words(std::string_view s);

struct LanguageId {
  std::string code;
  auto operator<=>(const LanguageId&) const = default;
};

// Closed set of language codes known to a model or data set.
class LanguageRegistry {
 public:
  LanguageRegistry() = default;
  explicit LanguageRegistry(std::vector<std::string> codes);

  LanguageId require(std::string_view code) const;
  bool contains(std::string_view code) const;
  const std::vector<std::string>& codes() const { return codes_; }

 private:
  std::vector<std::string> codes_;
};

}  // namespace unist::text
