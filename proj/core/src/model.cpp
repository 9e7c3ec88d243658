#include "unist/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "unist/error.hpp"

namespace unist::model {

namespace {

constexpr double kMaskedScore = -1e9;

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(',');
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

Tensor vector_param(std::size_t n, double value) {
  return Tensor::full({n}, value, true);
}

Tensor identity(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return Tensor::matrix(d, d, std::move(v), true);
}

int to_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty())
    throw ConfigError("model." + key + ": expected an integer, got '" + value + "'");
  return v;
}

}  // namespace

// ---- ModelConfig ----------------------------------------------------------

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_model = 32;
  c.heads = 4;
  c.ffn = 64;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.conv_blocks = 3;
  c.convs_per_block = 3;
  c.transformer_per_block = 1;
  c.dropout = 0.1;
  c.vocab_size = 128;
  c.n_mels = 40;
  c.languages = {"es", "fr", "en", "it"};
  return c;
}

void ModelConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("model: d_model must be a positive multiple of heads");
  if (ffn < 1 || enc_layers < 0 || dec_layers < 1)
    throw ConfigError("model: ffn >= 1, enc_layers >= 0, dec_layers >= 1 required");
  if (conv_blocks < 0 || convs_per_block < 1 || transformer_per_block < 0)
    throw ConfigError("model: invalid Conv-Transformer layout");
  if (kernel_width < 1 || kernel_width % 2 == 0)
    throw ConfigError("model: kernel_width must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
  if (vocab_size <= text::kNumSpecials) throw ConfigError("model: vocab_size too small");
  if (n_mels < 1) throw ConfigError("model: n_mels must be >= 1");
  if (languages.empty()) throw ConfigError("model: no languages registered");
  text::LanguageRegistry check(languages);
}

std::size_t ModelConfig::frontend_length(std::size_t frames) const {
  for (int b = 0; b < conv_blocks; ++b) frames = nn::conv1d_output_length(frames, 2);
  return frames;
}

std::size_t ModelConfig::min_frames() const { return std::size_t{1} << conv_blocks; }

std::vector<std::pair<std::string, std::string>> ModelConfig::to_entries() const {
  std::ostringstream drop;
  drop << dropout;
  return {{"d_model", std::to_string(d_model)},
          {"heads", std::to_string(heads)},
          {"ffn", std::to_string(ffn)},
          {"enc_layers", std::to_string(enc_layers)},
          {"dec_layers", std::to_string(dec_layers)},
          {"conv_blocks", std::to_string(conv_blocks)},
          {"convs_per_block", std::to_string(convs_per_block)},
          {"transformer_per_block", std::to_string(transformer_per_block)},
          {"kernel_width", std::to_string(kernel_width)},
          {"dropout", drop.str()},
          {"vocab_size", std::to_string(vocab_size)},
          {"n_mels", std::to_string(n_mels)},
          {"languages", join(languages)}};
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "d_model") d_model = to_int(key, value);
  else if (key == "heads") heads = to_int(key, value);
  else if (key == "ffn") ffn = to_int(key, value);
  else if (key == "enc_layers") enc_layers = to_int(key, value);
  else if (key == "dec_layers") dec_layers = to_int(key, value);
  else if (key == "conv_blocks") conv_blocks = to_int(key, value);
  else if (key == "convs_per_block") convs_per_block = to_int(key, value);
  else if (key == "transformer_per_block") transformer_per_block = to_int(key, value);
  else if (key == "kernel_width") kernel_width = to_int(key, value);
  else if (key == "vocab_size") vocab_size = to_int(key, value);
  else if (key == "n_mels") n_mels = to_int(key, value);
  else if (key == "languages") languages = split_list(value);
  else if (key == "dropout") {
    try {
      dropout = std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("model.dropout: expected a number, got '" + value + "'");
    }
  } else {
    return false;
  }
  return true;
}

// ---- construction ---------------------------------------------------------

UnifiedModel::UnifiedModel(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  languages_ = text::LanguageRegistry(config_.languages);
  build(init_seed);
}

UnifiedModel::UnifiedModel(ModelConfig config, ParameterStore params)
    : UnifiedModel(std::move(config), 0) {
  if (!params_.same_layout(params))
    throw ConfigError("checkpoint parameters do not match the model configuration");
  params_ = std::move(params);
}

void UnifiedModel::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto ffn = static_cast<std::size_t>(config_.ffn);
  const auto k = static_cast<std::size_t>(config_.kernel_width);

  auto add_linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add(prefix + ".w", nn::xavier_uniform(in, out, rng));
    params_.add(prefix + ".b", vector_param(out, 0.0));
  };
  auto add_norm = [&](const std::string& prefix) {
    params_.add(prefix + ".g", vector_param(d, 1.0));
    params_.add(prefix + ".b", vector_param(d, 0.0));
  };
  auto add_attention = [&](const std::string& prefix) {
    for (const char* m : {"q", "k", "v", "o"}) add_linear(prefix + "." + m, d, d);
  };
  auto add_ffn = [&](const std::string& prefix) {
    add_linear(prefix + ".fc1", d, ffn);
    add_linear(prefix + ".fc2", ffn, d);
  };
  auto add_encoder_layer = [&](const std::string& prefix) {
    add_attention(prefix + ".attn");
    add_norm(prefix + ".ln1");
    add_ffn(prefix + ".ffn");
    add_norm(prefix + ".ln2");
  };

  params_.add("embedding", nn::xavier_uniform(static_cast<std::size_t>(config_.vocab_size), d, rng));
  for (const auto& code : config_.languages) params_.add("lang." + code, identity(d));

  std::size_t channels = static_cast<std::size_t>(config_.n_mels);
  for (int b = 0; b < config_.conv_blocks; ++b) {
    const auto block = "frontend.block" + std::to_string(b);
    for (int c = 0; c < config_.convs_per_block; ++c) {
      add_linear(block + ".conv" + std::to_string(c), k * channels, d);
      channels = d;
    }
    for (int t = 0; t < config_.transformer_per_block; ++t)
      add_encoder_layer(block + ".layer" + std::to_string(t));
  }
  if (config_.conv_blocks == 0) add_linear("frontend.input", channels, d);

  for (int l = 0; l < config_.enc_layers; ++l) add_encoder_layer("encoder.layer" + std::to_string(l));
  for (int l = 0; l < config_.dec_layers; ++l) {
    const auto prefix = "decoder.layer" + std::to_string(l);
    add_attention(prefix + ".self");
    add_norm(prefix + ".ln1");
    add_attention(prefix + ".cross");
    add_norm(prefix + ".ln2");
    add_ffn(prefix + ".ffn");
    add_norm(prefix + ".ln3");
  }
}

// ---- building blocks ------------------------------------------------------

const Tensor& UnifiedModel::param(const std::string& name, const ForwardContext& ctx) const {
  if (ctx.touched) ctx.touched->insert(name);
  return params_.get(name);
}

Tensor UnifiedModel::linear(const Tensor& x, const std::string& prefix,
                            const ForwardContext& ctx) const {
  return nn::add_row(nn::matmul(x, param(prefix + ".w", ctx)), param(prefix + ".b", ctx));
}

Tensor UnifiedModel::norm(const Tensor& x, const std::string& prefix,
                          const ForwardContext& ctx) const {
  return nn::layer_norm(x, param(prefix + ".g", ctx), param(prefix + ".b", ctx));
}

Tensor UnifiedModel::drop(const Tensor& x, const ForwardContext& ctx) const {
  if (!ctx.training || config_.dropout <= 0.0) return x;
  if (!ctx.rng) throw std::logic_error("training forward pass needs an Rng for dropout");
  return nn::dropout(x, config_.dropout, *ctx.rng);
}

Tensor UnifiedModel::attention(const Tensor& query, const Tensor& memory,
                               const std::vector<bool>& key_mask, bool causal,
                               const std::string& prefix, const ForwardContext& ctx) const {
  const auto lq = query.rows(), lk = memory.rows();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto heads = static_cast<std::size_t>(config_.heads);
  const auto dh = d / heads;
  if (key_mask.size() != lk) throw std::invalid_argument("attention: mask length mismatch");

  const auto q = linear(query, prefix + ".q", ctx);
  const auto k = linear(memory, prefix + ".k", ctx);
  const auto v = linear(memory, prefix + ".v", ctx);

  bool any_masked = causal;
  for (bool valid : key_mask) any_masked = any_masked || !valid;
  Tensor bias;
  if (any_masked) {
    std::vector<double> b(lq * lk, 0.0);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j)
        if (!key_mask[j] || (causal && j > i)) b[i * lk + j] = kMaskedScore;
    bias = Tensor::matrix(lq, lk, std::move(b));
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = nn::slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = nn::slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = nn::slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = nn::scale(nn::matmul_nt(qh, kh), inv_sqrt);
    if (any_masked) scores = nn::add(scores, bias);
    outputs.push_back(nn::matmul(nn::softmax_rows(scores), vh));
  }
  const auto merged = heads == 1 ? outputs[0] : nn::concat_cols(outputs);
  return linear(merged, prefix + ".o", ctx);
}

Tensor UnifiedModel::feed_forward(const Tensor& x, const std::string& prefix,
                                  const ForwardContext& ctx) const {
  return linear(nn::gelu(linear(x, prefix + ".fc1", ctx)), prefix + ".fc2", ctx);
}

Tensor UnifiedModel::encoder_layer(const Tensor& x, const std::vector<bool>& mask,
                                   const std::string& prefix, const ForwardContext& ctx) const {
  auto h = norm(nn::add(x, drop(attention(x, x, mask, false, prefix + ".attn", ctx), ctx)),
                prefix + ".ln1", ctx);
  return norm(nn::add(h, drop(feed_forward(h, prefix + ".ffn", ctx), ctx)), prefix + ".ln2", ctx);
}

// ---- public forward pieces ------------------------------------------------

Tensor UnifiedModel::frontend(const audio::FeatureMatrix& features, ForwardContext ctx) const {
  if (features.dim() != static_cast<std::size_t>(config_.n_mels))
    throw std::invalid_argument("frontend: expected " + std::to_string(config_.n_mels) +
                                " feature bins, got " + std::to_string(features.dim()));
  if (features.frames() < config_.min_frames())
    throw std::invalid_argument("frontend: " + std::to_string(features.frames()) +
                                " frames is below the minimum of " +
                                std::to_string(config_.min_frames()));
  auto x = Tensor::matrix(features.frames(), features.dim(), features.values());
  if (config_.conv_blocks == 0) return nn::gelu(linear(x, "frontend.input", ctx));
  for (int b = 0; b < config_.conv_blocks; ++b) {
    const auto block = "frontend.block" + std::to_string(b);
    for (int c = 0; c < config_.convs_per_block; ++c) {
      const auto name = block + ".conv" + std::to_string(c);
      // Only the second convolution of a block strides (the first when there is just one).
      const std::size_t stride = c == std::min(1, config_.convs_per_block - 1) ? 2 : 1;
      x = nn::gelu(nn::conv1d(x, param(name + ".w", ctx), param(name + ".b", ctx), stride));
    }
    const std::vector<bool> all(x.rows(), true);
    for (int t = 0; t < config_.transformer_per_block; ++t)
      x = encoder_layer(x, all, block + ".layer" + std::to_string(t), ctx);
  }
  return x;
}

Tensor UnifiedModel::embed_text(std::span<const int> ids, ForwardContext ctx) const {
  const auto& table = param("embedding", ctx);
  if (ids.empty()) return Tensor::zeros({0, static_cast<std::size_t>(config_.d_model)});
  return nn::scale(nn::gather_rows(table, ids), std::sqrt(static_cast<double>(config_.d_model)));
}

Tensor UnifiedModel::language_project(const Tensor& hidden, const LanguageId& lang,
                                      ForwardContext ctx) const {
  if (!languages_.contains(lang.code))
    throw std::invalid_argument("unregistered language '" + lang.code + "'");
  return nn::matmul(hidden, param("lang." + lang.code, ctx));
}

Tensor UnifiedModel::add_positions(const Tensor& hidden) const {
  const auto len = hidden.rows(), d = hidden.cols();
  std::vector<double> pe(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = std::sin(angle);
      if (i + 1 < d) pe[pos * d + i + 1] = std::cos(angle);
    }
  }
  return nn::add(hidden, Tensor::from(hidden.shape(), std::move(pe)));
}

EncoderStates UnifiedModel::encode(const Tensor& hidden, std::vector<bool> mask,
                                   ForwardContext ctx) const {
  if (mask.size() != hidden.rows()) throw std::invalid_argument("encode: mask length mismatch");
  auto x = hidden;
  for (int l = 0; l < config_.enc_layers; ++l)
    x = encoder_layer(x, mask, "encoder.layer" + std::to_string(l), ctx);
  return {x, std::move(mask)};
}

SpeechEncoding UnifiedModel::encode_speech(const audio::FeatureMatrix& features,
                                           const LanguageId& src, ForwardContext ctx) const {
  auto front = frontend(features, ctx);
  auto h = drop(add_positions(language_project(front, src, ctx)), ctx);
  std::vector<bool> mask(h.rows(), true);
  return {front, encode(h, std::move(mask), ctx)};
}

EncoderStates UnifiedModel::encode_text(std::span<const int> ids, const LanguageId& src,
                                        ForwardContext ctx) const {
  if (ids.empty()) throw std::invalid_argument("encode_text: empty source");
  auto h = drop(add_positions(language_project(embed_text(ids, ctx), src, ctx)), ctx);
  std::vector<bool> mask(h.rows(), true);
  return encode(h, std::move(mask), ctx);
}

Tensor UnifiedModel::decoder_log_probs(const EncoderStates& enc, std::span<const int> prefix,
                                       const LanguageId& tgt, ForwardContext ctx) const {
  if (prefix.empty() || prefix.front() != text::kBos)
    throw std::invalid_argument("decoder prefix must start with bos");
  auto x = drop(add_positions(language_project(embed_text(prefix, ctx), tgt, ctx)), ctx);
  const std::vector<bool> self_mask(x.rows(), true);
  for (int l = 0; l < config_.dec_layers; ++l) {
    const auto p = "decoder.layer" + std::to_string(l);
    x = norm(nn::add(x, drop(attention(x, x, self_mask, true, p + ".self", ctx), ctx)),
             p + ".ln1", ctx);
    x = norm(nn::add(x, drop(attention(x, enc.states, enc.mask, false, p + ".cross", ctx), ctx)),
             p + ".ln2", ctx);
    x = norm(nn::add(x, drop(feed_forward(x, p + ".ffn", ctx), ctx)), p + ".ln3", ctx);
  }
  return nn::log_softmax_rows(nn::matmul_nt(x, param("embedding", ctx)));
}

Tensor UnifiedModel::decode_step(const EncoderStates& enc, std::span<const int> prefix,
                                 const LanguageId& tgt, ForwardContext ctx) const {
  const auto all = decoder_log_probs(enc, prefix, tgt, ctx);
  return nn::slice_rows(all, all.rows() - 1, all.rows());
}

Tensor UnifiedModel::ctc_head(const Tensor& frontend_out, ForwardContext ctx) const {
  return nn::log_softmax_rows(nn::matmul_nt(frontend_out, param("embedding", ctx)));
}

}  // namespace unist::model
