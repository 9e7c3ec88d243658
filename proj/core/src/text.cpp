#include "unist/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unist/error.hpp"

namespace unist::text {

namespace {

const char* const kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<s>", "</s>", "<blank>"};
constexpr std::string_view kMergesHeader = "#MERGES";

std::string merge_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left).push_back(' ');
  key.append(right);
  return key;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> word_symbols(std::string_view word) {
  auto symbols = utf8_chars(word);
  symbols.emplace_back(kEndOfWord);
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) len = 1;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    const auto start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) words.emplace_back(s.substr(start, i - start));
  }
  return words;
}

// ---- Vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* tok : kSpecialTokens) add_token(tok);
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

int Vocabulary::merge_rank(const std::string& left, const std::string& right) const {
  auto it = merge_index_.find(merge_key(left, right));
  return it == merge_index_.end() ? -1 : it->second;
}

int Vocabulary::add_token(std::string token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

void Vocabulary::add_merge(MergePair pair) {
  merge_index_.emplace(merge_key(pair.first, pair.second), static_cast<int>(merges_.size()));
  merges_.push_back(std::move(pair));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& tok : tokens_) out.append(tok).push_back('\n');
  out.append(kMergesHeader).push_back('\n');
  for (const auto& [l, r] : merges_) out.append(l).append(" ").append(r).push_back('\n');
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot write vocabulary");
  out << serialize();
}

Vocabulary Vocabulary::parse(std::string_view contents) {
  Vocabulary v;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  bool in_merges = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!in_merges && line == kMergesHeader) {
      in_merges = true;
      continue;
    }
    if (!in_merges) {
      if (line_no <= static_cast<std::size_t>(kNumSpecials)) {
        if (line != kSpecialTokens[line_no - 1])
          throw DataError("vocabulary line " + std::to_string(line_no) + ": expected special " +
                          kSpecialTokens[line_no - 1]);
        continue;
      }
      if (line.empty() || v.contains(line))
        throw DataError("vocabulary line " + std::to_string(line_no) + ": empty or duplicate token");
      v.add_token(line);
    } else {
      const auto sp = line.find(' ');
      if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos)
        throw DataError("vocabulary line " + std::to_string(line_no) + ": malformed merge");
      v.add_merge({line.substr(0, sp), line.substr(sp + 1)});
    }
  }
  if (!in_merges) throw DataError("vocabulary: missing #MERGES section");
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open vocabulary");
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(contents);
}

// ---- BPE ------------------------------------------------------------------

Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw DataError("train_bpe: empty corpus");

  std::map<std::string, std::size_t> word_freq;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) ++word_freq[w];
  if (word_freq.empty()) throw DataError("train_bpe: corpus has no words");

  struct Word {
    std::vector<std::string> symbols;
    std::size_t freq;
  };
  std::vector<Word> words;
  std::set<std::string> base;
  for (const auto& [w, f] : word_freq) {
    words.push_back({word_symbols(w), f});
    base.insert(words.back().symbols.begin(), words.back().symbols.end());
  }

  Vocabulary vocab;
  if (target_size < vocab.size() + base.size())
    throw std::invalid_argument("train_bpe: target_size " + std::to_string(target_size) +
                                " smaller than the " + std::to_string(vocab.size() + base.size()) +
                                " specials and base symbols");
  for (const auto& s : base) vocab.add_token(s);

  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i)
        pair_freq[{w.symbols[i], w.symbols[i + 1]}] += w.freq;
    // std::map iterates in lexicographic pair order, so the first maximum wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_freq = 0;
    for (const auto& [pair, f] : pair_freq) {
      if (f > best_freq) {
        best = &pair;
        best_freq = f;
      }
    }
    if (!best || best_freq < 2) break;
    const auto pair = *best;
    for (auto& w : words) apply_merge(w.symbols, pair.first, pair.second);
    vocab.add_token(pair.first + pair.second);
    vocab.add_merge(pair);
  }
  return vocab;
}

std::vector<int> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& word : split_words(text)) {
    auto symbols = word_symbols(word);
    while (symbols.size() > 1) {
      int best_rank = -1;
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        const int r = vocab.merge_rank(symbols[i], symbols[i + 1]);
        if (r >= 0 && (best_rank < 0 || r < best_rank)) {
          best_rank = r;
          best_at = i;
        }
      }
      if (best_rank < 0) break;
      const auto left = symbols[best_at], right = symbols[best_at + 1];
      apply_merge(symbols, left, right);
    }
    for (const auto& s : symbols) ids.push_back(vocab.id(s));
  }
  return ids;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const auto& tok = vocab.token(id);
    if (Vocabulary::is_special(id)) continue;
    if (tok.size() >= kEndOfWord.size() &&
        std::string_view(tok).substr(tok.size() - kEndOfWord.size()) == kEndOfWord) {
      out.append(tok, 0, tok.size() - kEndOfWord.size());
      out.push_back(' ');
    } else {
      out.append(tok);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// ---- languages ------------------------------------------------------------

LanguageRegistry::LanguageRegistry(std::vector<std::string> codes) : codes_(std::move(codes)) {
  std::set<std::string> seen;
  for (const auto& c : codes_) {
    if (c.empty() || !seen.insert(c).second)
      throw ConfigError("language list has an empty or duplicate code '" + c + "'");
  }
}

bool LanguageRegistry::contains(std::string_view code) const {
  return std::find(codes_.begin(), codes_.end(), code) != codes_.end();
}

LanguageId LanguageRegistry::require(std::string_view code) const {
  if (!contains(code)) throw DataError("unregistered language '" + std::string(code) + "'");
  return LanguageId{std::string(code)};
}

}  // namespace unist::text
