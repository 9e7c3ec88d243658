#pragma once

// A handful of random in-memory samples for short training runs.

#include <memory>
#include <string>
#include <vector>

#include "unist/rng.hpp"
#include "unist/training.hpp"

namespace unist::testing {

inline train::TrainConfig tiny_train_config() {
  train::TrainConfig cfg;
  cfg.model.d_model = 8;
  cfg.model.heads = 2;
  cfg.model.ffn = 16;
  cfg.model.enc_layers = 1;
  cfg.model.dec_layers = 1;
  cfg.model.vocab_size = 24;
  cfg.model.n_mels = 6;
  cfg.model.languages = {"es", "en"};
  cfg.batch_size = 2;
  cfg.warmup = 4;
  cfg.base_lr = 1e-3;
  cfg.spec_augment.time_mask_max = 4;
  cfg.phases[0].steps = 4;
  cfg.phases[1].steps = 4;
  cfg.phases[2].steps = 4;
  return cfg;
}

inline std::vector<int> random_ids(Rng& rng, std::size_t n, int vocab) {
  std::vector<int> ids(n);
  for (auto& t : ids) t = static_cast<int>(rng.uniform_int(text::kNumSpecials, vocab - 1));
  return ids;
}

inline train::SpeechPtr random_speech(Rng& rng, std::size_t frames, std::size_t dim) {
  auto m = std::make_shared<audio::FeatureMatrix>(frames, dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t f = 0; f < dim; ++f) (*m)(t, f) = rng.uniform_real(-1.0, 1.0);
  return m;
}

inline std::vector<train::Sample> tiny_samples(const model::ModelConfig& mc, std::uint64_t seed = 3) {
  Rng rng(seed);
  std::vector<train::StRecord> st;
  for (int i = 0; i < 4; ++i)
    st.push_back({"u" + std::to_string(i),
                  random_speech(rng, 40 + 8 * static_cast<std::size_t>(i), static_cast<std::size_t>(mc.n_mels)),
                  {"es"}, {"en"}, random_ids(rng, 3, mc.vocab_size), random_ids(rng, 3, mc.vocab_size)});
  std::vector<train::NmtRecord> nmt;
  for (int i = 0; i < 2; ++i)
    nmt.push_back({"t" + std::to_string(i), {"es"}, {"en"}, random_ids(rng, 4, mc.vocab_size),
                   random_ids(rng, 4, mc.vocab_size)});
  return train::build_task_views(st, {}, nmt);
}

}  // namespace unist::testing
