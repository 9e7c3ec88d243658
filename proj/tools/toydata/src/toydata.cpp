#include "unist/toydata.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "unist/audio_features.hpp"
#include "unist/rng.hpp"
#include "unist/text.hpp"

namespace unist::toy {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kConcepts = 8;
constexpr int kRate = 16000;
constexpr double kToneSeconds = 0.2;
constexpr double kGapSeconds = 0.05;

const std::map<std::string, std::vector<std::string>>& lexicon() {
  static const std::map<std::string, std::vector<std::string>> words = {
      {"es", {"uno", "dos", "tres", "gato", "perro", "casa", "sol", "agua"}},
      {"fr", {"un", "deux", "trois", "chat", "chien", "maison", "soleil", "eau"}},
      {"en", {"one", "two", "three", "cat", "dog", "house", "sun", "water"}},
      {"it", {"uno", "due", "tre", "gatto", "cane", "casa", "sole", "acqua"}},
  };
  return words;
}

const std::vector<std::string>& words_of(const std::string& lang) {
  auto it = lexicon().find(lang);
  if (it == lexicon().end()) throw std::invalid_argument("toy: unknown language '" + lang + "'");
  return it->second;
}

// Log-spaced between 250 Hz and 3.5 kHz, es on even slots and fr on odd ones,
// so no two source words share a tone.
double tone_hz(const std::string& src, std::size_t concept_id) {
  const std::size_t slot = 2 * concept_id + (src == "fr" ? 1 : 0);
  const double lo = 250.0, hi = 3500.0;
  return lo * std::pow(hi / lo, static_cast<double>(slot) / (2.0 * kConcepts - 1.0));
}

audio::Waveform synthesize(const std::string& src, const std::vector<std::size_t>& concepts) {
  audio::Waveform w;
  w.sample_rate = kRate;
  const auto tone_n = static_cast<std::size_t>(kToneSeconds * kRate);
  const auto gap_n = static_cast<std::size_t>(kGapSeconds * kRate);
  const auto ramp = tone_n / 10;
  w.samples.assign(gap_n, 0.0);
  for (auto c : concepts) {
    const double f = tone_hz(src, c);
    for (std::size_t i = 0; i < tone_n; ++i) {
      double env = 1.0;
      if (i < ramp) env = static_cast<double>(i) / static_cast<double>(ramp);
      else if (i + ramp > tone_n) env = static_cast<double>(tone_n - i) / static_cast<double>(ramp);
      w.samples.push_back(0.5 * env *
                          std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / kRate));
    }
    w.samples.insert(w.samples.end(), gap_n, 0.0);
  }
  return w;
}

std::string join(const std::string& lang, const std::vector<std::size_t>& concepts) {
  const auto& words = words_of(lang);
  std::string out;
  for (auto c : concepts) {
    if (!out.empty()) out += ' ';
    out += words[c];
  }
  return out;
}

std::vector<std::size_t> draw_sentence(Rng& rng, const ToyCorpusOptions& o) {
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(o.min_words), static_cast<std::int64_t>(o.max_words)));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(static_cast<std::size_t>(rng.uniform_int(0, kConcepts - 1)));
  return out;
}

}  // namespace

std::vector<std::string> toy_sources() { return {"es", "fr"}; }
std::vector<std::string> toy_targets() { return {"en", "it"}; }
std::vector<std::string> toy_languages() { return {"es", "fr", "en", "it"}; }

std::string toy_translate(const std::string& sentence, const std::string& src,
                          const std::string& tgt) {
  const auto& from = words_of(src);
  std::vector<std::size_t> concepts;
  for (const auto& w : text::split_words(sentence)) {
    std::size_t c = 0;
    while (c < from.size() && from[c] != w) ++c;
    if (c == from.size()) throw std::invalid_argument("toy: '" + w + "' is not a " + src + " word");
    concepts.push_back(c);
  }
  return join(tgt, concepts);
}

ToyCorpusSummary write_toy_corpus(const fs::path& raw_dir, const ToyCorpusOptions& o) {
  if (o.min_words < 1 || o.max_words < o.min_words)
    throw std::invalid_argument("toy: need 1 <= min_words <= max_words");
  if (o.dev_per_source > o.utterances_per_source)
    throw std::invalid_argument("toy: more dev utterances than utterances");
  ToyCorpusSummary summary;
  fs::create_directories(raw_dir);
  std::ofstream dev(raw_dir / "dev.lst", std::ios::trunc);
  if (!dev) throw std::runtime_error("toy: cannot write " + (raw_dir / "dev.lst").string());
  const auto sources = o.zero_shot ? std::vector<std::string>{"es"} : toy_sources();
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    const auto dir = raw_dir / src;
    fs::create_directories(dir / "wav");
    auto rng = Rng::derive(o.seed, src, 0);

    std::ofstream utts(dir / "utterances.tsv", std::ios::trunc);
    for (std::size_t i = 0; i < o.utterances_per_source; ++i) {
      const auto concepts = draw_sentence(rng, o);
      const auto id = src + "_u" + std::to_string(i);
      const auto tgt = toy_targets()[i % 2];
      audio::write_wav(dir / "wav" / (id + ".wav"), synthesize(src, concepts));
      if (o.zero_shot) {
        utts << id << '\t' << join(src, concepts) << "\t-\t-\n";
      } else {
        utts << id << '\t' << join(src, concepts) << '\t' << tgt << '\t' << join(tgt, concepts) << '\n';
        ++summary.translated;
      }
      ++summary.utterances;
      if (i >= o.utterances_per_source - o.dev_per_source) {
        dev << id << '\n';
        ++summary.dev;
      }
    }

    std::ofstream text(dir / "text.tsv", std::ios::trunc);
    for (std::size_t i = 0; i < o.text_pairs_per_source; ++i) {
      const auto concepts = draw_sentence(rng, o);
      const auto tgt = o.zero_shot ? std::string("en") : toy_targets()[(i + s) % 2];
      text << src << "_t" << i << '\t' << tgt << '\t' << join(src, concepts) << '\t'
           << join(tgt, concepts) << '\n';
      ++summary.text_pairs;
    }
  }
  return summary;
}

}  // namespace unist::toy
