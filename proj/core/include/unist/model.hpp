#pragma once

// Unified speech/text encoder-decoder. Speech enters through a stack of
// Conv-Transformer blocks that downsample time 8x, text through the word
// embedding; both then pass a per-language projection, sinusoidal positions
// and the same semantic encoder. One decoder serves every task, and its output
// projection, the input embedding and the CTC projection are one table.

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "unist/audio_features.hpp"
#include "unist/numerics.hpp"
#include "unist/rng.hpp"
#include "unist/text.hpp"

namespace unist::model {

using nn::ParameterStore;
using nn::Tensor;
using text::LanguageId;

struct ModelConfig {
  int d_model = 512;
  int heads = 8;
  int ffn = 2048;
  int enc_layers = 6;
  int dec_layers = 6;
  int conv_blocks = 3;
  int convs_per_block = 3;
  int transformer_per_block = 2;
  int kernel_width = 3;
  double dropout = 0.1;
  int vocab_size = 10000;
  int n_mels = 80;
  std::vector<std::string> languages;

  // Small configuration for desk-scale runs and tests.
  static ModelConfig toy();

  void validate() const;
  // Frames left after the frontend: ceil(T/2) once per block.
  std::size_t frontend_length(std::size_t frames) const;
  std::size_t min_frames() const;

  // key=value pairs, in the order written to checkpoint sidecars.
  std::vector<std::pair<std::string, std::string>> to_entries() const;
  // Applies one key=value; returns false for an unknown key.
  bool set(const std::string& key, const std::string& value);
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderStates {
  Tensor states;           // L × d_model
  std::vector<bool> mask;  // true = valid position
};

struct SpeechEncoding {
  Tensor frontend;  // T' × d_model, input of the CTC head
  EncoderStates encoder;
};

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;                     // dropout draws; needed when training
  std::set<std::string>* touched = nullptr;  // parameter names read, if set
};

class UnifiedModel {
 public:
  UnifiedModel(ModelConfig config, std::uint64_t init_seed);
  // Adopts weights, e.g. from a checkpoint. Throws if names or shapes differ
  // from what `config` implies.
  UnifiedModel(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const text::LanguageRegistry& languages() const { return languages_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // T × n_mels features -> T' × d_model.
  Tensor frontend(const audio::FeatureMatrix& features, ForwardContext ctx = {}) const;
  // ids -> L × d_model, looked up in the shared table and scaled by sqrt(d).
  Tensor embed_text(std::span<const int> ids, ForwardContext ctx = {}) const;
  Tensor language_project(const Tensor& hidden, const LanguageId& lang,
                          ForwardContext ctx = {}) const;
  Tensor add_positions(const Tensor& hidden) const;
  // Shared semantic encoder.
  EncoderStates encode(const Tensor& hidden, std::vector<bool> mask,
                       ForwardContext ctx = {}) const;

  SpeechEncoding encode_speech(const audio::FeatureMatrix& features, const LanguageId& src,
                               ForwardContext ctx = {}) const;
  EncoderStates encode_text(std::span<const int> ids, const LanguageId& src,
                            ForwardContext ctx = {}) const;

  // Log-probabilities for every prefix position (teacher forcing): L × V.
  Tensor decoder_log_probs(const EncoderStates& enc, std::span<const int> prefix,
                           const LanguageId& tgt, ForwardContext ctx = {}) const;
  // Next-token log-probabilities after `prefix` (which starts with bos): 1 × V.
  Tensor decode_step(const EncoderStates& enc, std::span<const int> prefix,
                     const LanguageId& tgt, ForwardContext ctx = {}) const;
  // T' × V log-probabilities over the shared vocabulary; blank is text::kBlank.
  Tensor ctc_head(const Tensor& frontend_out, ForwardContext ctx = {}) const;

 private:
  const Tensor& param(const std::string& name, const ForwardContext& ctx) const;
  Tensor linear(const Tensor& x, const std::string& prefix, const ForwardContext& ctx) const;
  Tensor attention(const Tensor& query, const Tensor& memory, const std::vector<bool>& key_mask,
                   bool causal, const std::string& prefix, const ForwardContext& ctx) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix, const ForwardContext& ctx) const;
  Tensor norm(const Tensor& x, const std::string& prefix, const ForwardContext& ctx) const;
  Tensor encoder_layer(const Tensor& x, const std::vector<bool>& mask, const std::string& prefix,
                       const ForwardContext& ctx) const;
  Tensor drop(const Tensor& x, const ForwardContext& ctx) const;
  void build(std::uint64_t seed);

  ModelConfig config_;
  text::LanguageRegistry languages_;
  ParameterStore params_;
};

}  // namespace unist::model
