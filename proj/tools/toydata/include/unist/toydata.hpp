#pragma once

// Synthetic speech-translation corpus for desk-scale runs. Every source word
// is a pure tone of its own frequency, so "speech" is a tone sequence aligned
// with its transcript; translations are word-by-word dictionary lookups.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace unist::toy {

struct ToyCorpusOptions {
  std::size_t utterances_per_source = 30;
  std::size_t text_pairs_per_source = 20;
  std::size_t dev_per_source = 4;
  std::size_t min_words = 2;
  std::size_t max_words = 4;
  // Only es speech with its transcript plus es->en text; no translations of
  // speech at all.
  bool zero_shot = false;
  std::uint64_t seed = 7;
};

struct ToyCorpusSummary {
  std::size_t utterances = 0;
  std::size_t translated = 0;
  std::size_t text_pairs = 0;
  std::size_t dev = 0;
};

// Source languages first, then targets.
std::vector<std::string> toy_languages();
std::vector<std::string> toy_sources();
std::vector<std::string> toy_targets();

// Word-by-word translation of a toy sentence.
std::string toy_translate(const std::string& sentence, const std::string& src,
                          const std::string& tgt);

// Writes the raw layout read by pipeline::prepare_data.
ToyCorpusSummary write_toy_corpus(const std::filesystem::path& raw_dir,
                                  const ToyCorpusOptions& options = {});

}  // namespace unist::toy
