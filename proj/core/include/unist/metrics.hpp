#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unist::metrics {

struct EvalReport {
  std::string metric;  // "BLEU" or "WER"
  double score = 0.0;
  std::vector<double> per_sample;
  std::size_t samples = 0;

  // One line per sample ("index<TAB>score") followed by the corpus line.
  std::string to_tsv() const;
  // Single-line JSON summary.
  std::string summary_json() const;
};

// Corpus BLEU-4 on whitespace tokens, in [0, 100]. Zero n-gram matches are
// replaced by 1e-16 before the log; brevity penalty exp(min(0, 1 - r/h)).
double bleu(std::span<const std::string> hyps, std::span<const std::string> refs);

// Levenshtein distance between token sequences.
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

// Σ edit distance / Σ reference length.
double wer(std::span<const std::string> hyps, std::span<const std::string> refs);

EvalReport bleu_report(std::span<const std::string> hyps, std::span<const std::string> refs);
EvalReport wer_report(std::span<const std::string> hyps, std::span<const std::string> refs);

}  // namespace unist::metrics
