#include "unist/audio_features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "unist/error.hpp"

namespace unist::audio {

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
}

std::size_t FeatureConfig::fft_size() const {
  return std::bit_ceil(window_samples());
}

void FeatureConfig::validate() const {
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (!(hop_ms > 0.0) || window_ms < hop_ms)
    throw ConfigError("need window_ms >= hop_ms > 0");
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (hop_samples() == 0) throw ConfigError("hop shorter than one sample");
}

FeatureMatrix::FeatureMatrix(std::size_t frames, std::size_t dim, double fill)
    : frames_(frames), dim_(dim), data_(frames * dim, fill) {}

FeatureMatrix::FeatureMatrix(std::size_t frames, std::size_t dim,
                             std::vector<double> values)
    : frames_(frames), dim_(dim), data_(std::move(values)) {
  if (data_.size() != frames * dim)
    throw std::invalid_argument("FeatureMatrix: value count does not match shape");
}

// ---- WAV ------------------------------------------------------------------

namespace {

std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put16(std::ofstream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open WAV file");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
    fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  int channels = 0, rate = 0, bits = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    const std::size_t size = le32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) fail("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) fail("short fmt chunk");
      const auto format = le16(&bytes[body]);
      channels = le16(&bytes[body + 2]);
      rate = static_cast<int>(le32(&bytes[body + 4]));
      bits = le16(&bytes[body + 14]);
      if (format != 1) fail("unsupported encoding (only uncompressed PCM)");
      have_fmt = true;
    } else if (id == "data") {
      pcm = &bytes[body];
      pcm_bytes = size;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (!pcm) fail("missing data chunk");
  if (channels != 1) fail("unsupported channel count " + std::to_string(channels) + " (mono only)");
  if (bits != 16) fail("unsupported sample width " + std::to_string(bits) + " bits (16-bit only)");
  if (rate != expected_rate)
    fail("unsupported sample rate " + std::to_string(rate) + " (expected " +
         std::to_string(expected_rate) + ")");

  Waveform wave;
  wave.sample_rate = rate;
  wave.samples.resize(pcm_bytes / 2);
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    const auto raw = static_cast<std::int16_t>(le16(pcm + 2 * i));
    wave.samples[i] = raw / 32768.0;
  }
  if (wave.samples.empty()) fail("no samples");
  return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot write WAV file");
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  out.write("RIFF", 4);
  put32(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, 2 * n);
  for (double s : wave.samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
  }
}

// ---- log-mel --------------------------------------------------------------

std::size_t frame_count(std::size_t n_samples, std::size_t window, std::size_t hop) {
  if (n_samples < window) return 0;
  return 1 + (n_samples - window) / hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges_hz(const FeatureConfig& cfg) {
  const double lo = hz_to_mel(cfg.low_hz);
  const double hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(cfg.n_mels + 1));
  return edges;
}

// FFTW's planner is not thread-safe; execution with new arrays is.
std::mutex g_plan_mutex;

fftw_plan plan_for(std::size_t n) {
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(g_plan_mutex);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  auto* in = fftw_alloc_real(n);
  auto* out = fftw_alloc_complex(n / 2 + 1);
  auto plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  plans.emplace(n, plan);
  return plan;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

std::vector<double> mel_centers_hz(const FeatureConfig& cfg) {
  auto edges = mel_edges_hz(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg) {
  const auto n_fft = cfg.fft_size();
  const auto n_bins = n_fft / 2 + 1;
  const auto edges = mel_edges_hz(cfg);
  std::vector<std::vector<double>> bank(static_cast<std::size_t>(cfg.n_mels),
                                        std::vector<double>(n_bins, 0.0));
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double hz = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(n_fft);
      if (hz > left && hz < right)
        bank[m][k] = hz <= centre ? (hz - left) / (centre - left)
                                  : (right - hz) / (right - centre);
    }
  }
  return bank;
}

FeatureMatrix log_mel(const Waveform& wave, const FeatureConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != cfg.sample_rate)
    throw DataError("log_mel: unsupported sample rate " + std::to_string(wave.sample_rate));
  const auto win = cfg.window_samples();
  const auto hop = cfg.hop_samples();
  const auto frames = frame_count(wave.samples.size(), win, hop);
  if (frames == 0)
    throw DataError("log_mel: audio of " + std::to_string(wave.samples.size()) +
                    " samples is shorter than one window (" + std::to_string(win) + ")");

  const auto n_fft = cfg.fft_size();
  const auto n_bins = n_fft / 2 + 1;
  std::vector<double> hann(win);
  for (std::size_t i = 0; i < win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(win - 1 ? win - 1 : 1));
  const auto bank = mel_filterbank(cfg);
  const auto plan = plan_for(n_fft);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(n_fft));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(n_bins));
  std::vector<double> power(n_bins);

  FeatureMatrix result(frames, static_cast<std::size_t>(cfg.n_mels));
  for (std::size_t t = 0; t < frames; ++t) {
    double* buf = in.get();
    for (std::size_t i = 0; i < n_fft; ++i)
      buf[i] = i < win ? wave.samples[t * hop + i] * hann[i] : 0.0;
    fftw_execute_dft_r2c(plan, buf, out.get());
    for (std::size_t k = 0; k < n_bins; ++k) {
      const auto& c = out.get()[k];
      power[k] = c[0] * c[0] + c[1] * c[1];
    }
    for (std::size_t m = 0; m < bank.size(); ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += bank[m][k] * power[k];
      result(t, m) = std::log(std::max(e, 1e-10));
    }
  }
  return result;
}

FeatureMatrix cmvn(const FeatureMatrix& features) {
  const auto T = features.frames(), F = features.dim();
  FeatureMatrix out(T, F);
  if (T == 0) return out;
  for (std::size_t f = 0; f < F; ++f) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += features(t, f);
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double d = features(t, f) - mean;
      var += d * d;
    }
    var /= static_cast<double>(T);
    const double inv = var > 1e-20 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double centred = features(t, f) - mean;
      out(t, f) = var > 1e-20 ? centred * inv : 0.0;
    }
  }
  return out;
}

// ---- feature files --------------------------------------------------------

void save_features(const FeatureMatrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot write feature file");
  out.write("FEAT", 4);
  put32(out, static_cast<std::uint32_t>(features.frames()));
  put32(out, static_cast<std::uint32_t>(features.dim()));
  for (double v : features.values()) put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open feature file");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "FEAT")
    throw DataError(path.string() + ": not a FEAT file");
  const std::size_t T = le32(&bytes[4]), F = le32(&bytes[8]);
  if (bytes.size() != 12 + 4 * T * F)
    throw DataError(path.string() + ": payload size does not match header");
  std::vector<double> values(T * F);
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = std::bit_cast<float>(le32(&bytes[12 + 4 * i]));
  return FeatureMatrix(T, F, std::move(values));
}

}  // namespace unist::audio
