#include "unist/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace unist::decode {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double Hypothesis::normalized(double length_penalty) const {
  const auto len = std::max<std::size_t>(generated(), 1);
  return score / std::pow(static_cast<double>(len), length_penalty);
}

std::size_t speech_max_len(std::size_t frames) { return 2 + 2 * (frames / 8); }
std::size_t text_max_len(std::size_t source_tokens) {
  return std::max<std::size_t>(2, 2 * source_tokens);
}

ModelScorer::ModelScorer(const model::UnifiedModel& model, model::EncoderStates enc,
                         text::LanguageId tgt)
    : model_(model), enc_(std::move(enc)), tgt_(std::move(tgt)) {}

std::size_t ModelScorer::vocab_size() const {
  return static_cast<std::size_t>(model_.config().vocab_size);
}

std::vector<double> ModelScorer::next_log_probs(std::span<const int> prefix) const {
  nn::NoGradGuard no_grad;
  auto row = model_.decode_step(enc_, prefix, tgt_).row(0);
  for (int banned : {text::kPad, text::kUnk, text::kBos, text::kBlank}) row[static_cast<std::size_t>(banned)] = kNegInf;
  return row;
}

std::vector<double> ensemble_distribution(std::span<const StepScorer* const> models,
                                          std::span<const int> prefix) {
  if (models.empty()) throw std::invalid_argument("ensemble: no models");
  const auto V = models[0]->vocab_size();
  std::vector<double> avg(V, 0.0);
  for (const auto* m : models) {
    if (m->vocab_size() != V) throw std::invalid_argument("ensemble: vocabulary sizes differ");
    const auto lp = m->next_log_probs(prefix);
    for (std::size_t v = 0; v < V; ++v) avg[v] += std::exp(lp[v]);
  }
  for (auto& p : avg) p /= static_cast<double>(models.size());
  return avg;
}

std::vector<double> ensemble_log_probs(std::span<const StepScorer* const> models,
                                       std::span<const int> prefix) {
  if (models.size() == 1) return models[0]->next_log_probs(prefix);
  auto probs = ensemble_distribution(models, prefix);
  for (auto& p : probs) p = p > 0.0 ? std::log(p) : kNegInf;
  return probs;
}

Hypothesis beam_search(std::span<const StepScorer* const> models, const DecodeConfig& cfg,
                       int bos, int eos) {
  if (cfg.beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (cfg.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  if (models.empty()) throw std::invalid_argument("beam_search: no models");
  const auto beam = static_cast<std::size_t>(cfg.beam);

  struct Candidate {
    double score;
    int token;
    std::size_t parent;
  };

  std::vector<Hypothesis> live{{{bos}, 0.0, false}};
  std::vector<Hypothesis> pool;
  for (std::size_t step = 1; step <= cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto lp = ensemble_log_probs(models, live[p].ids);
      for (std::size_t v = 0; v < lp.size(); ++v)
        if (lp[v] > kNegInf && !(static_cast<int>(v) == eos && step <= cfg.min_len))
          cands.push_back({live[p].score + lp[v], static_cast<int>(v), p});
    }
    const auto keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis h = live[cands[i].parent];
      h.ids.push_back(cands[i].token);
      h.score = cands[i].score;
      h.finished = cands[i].token == eos;
      if (h.finished || step == cfg.max_len) pool.push_back(std::move(h));
      else next.push_back(std::move(h));
    }
    live = std::move(next);
  }
  if (pool.empty()) return live.empty() ? Hypothesis{{bos}, 0.0, false} : live.front();

  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (pool[i].normalized(cfg.length_penalty) > pool[best].normalized(cfg.length_penalty))
      best = i;
  return pool[best];
}

}  // namespace unist::decode
