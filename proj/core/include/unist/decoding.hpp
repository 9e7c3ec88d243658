#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unist/model.hpp"

namespace unist::decode {

struct Hypothesis {
  std::vector<int> ids;  // starts with bos
  double score = 0.0;    // cumulative log-probability
  bool finished = false;  // ended with eos (false when cut at max_len)

  std::size_t generated() const { return ids.empty() ? 0 : ids.size() - 1; }
  double normalized(double length_penalty) const;
};

struct DecodeConfig {
  int beam = 5;
  std::size_t max_len = 0;  // generated tokens, eos included; must be set
  std::size_t min_len = 0;  // eos is not proposed before this many tokens
  double length_penalty = 1.0;
};

std::size_t speech_max_len(std::size_t frames);
std::size_t text_max_len(std::size_t source_tokens);

// Anything that maps a prefix to next-token log-probabilities.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) const = 0;
};

// One trained model bound to an encoded source and a target language. Pad,
// unk, bos and blank are never proposed.
class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const model::UnifiedModel& model, model::EncoderStates enc,
              text::LanguageId tgt);
  std::size_t vocab_size() const override;
  std::vector<double> next_log_probs(std::span<const int> prefix) const override;

 private:
  const model::UnifiedModel& model_;
  model::EncoderStates enc_;
  text::LanguageId tgt_;
};

// Arithmetic mean of the members' probability rows. Throws when vocabulary
// sizes differ.
std::vector<double> ensemble_distribution(std::span<const StepScorer* const> models,
                                          std::span<const int> prefix);
// log of ensemble_distribution; a single model is passed through unchanged.
std::vector<double> ensemble_log_probs(std::span<const StepScorer* const> models,
                                       std::span<const int> prefix);

// Beam search over the (ensemble) distribution. Each step expands every live
// hypothesis, keeps the `beam` best by cumulative score (ties: lower token id,
// then earlier parent), retires eos-terminated or max_len hypotheses to a
// pool, and stops when nothing is live or max_len is reached. The
// pool entry with the best length-normalized score wins; ties go to the one
// that finished first.
Hypothesis beam_search(std::span<const StepScorer* const> models, const DecodeConfig& cfg,
                       int bos = text::kBos, int eos = text::kEos);

}  // namespace unist::decode
