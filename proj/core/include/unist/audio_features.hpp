#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace unist::audio {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

struct FeatureConfig {
  int n_mels = 80;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int sample_rate = 16000;
  double low_hz = 20.0;  // upper edge is Nyquist

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_size() const;  // smallest power of two >= window_samples
  void validate() const;
};

// T×F row-major grid: one row per frame.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t frames, std::size_t dim, double fill = 0.0);
  FeatureMatrix(std::size_t frames, std::size_t dim, std::vector<double> values);

  std::size_t frames() const { return frames_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return frames_ == 0; }

  double& operator()(std::size_t t, std::size_t f) { return data_[t * dim_ + f]; }
  double operator()(std::size_t t, std::size_t f) const { return data_[t * dim_ + f]; }
  std::span<const double> row(std::size_t t) const {
    return {data_.data() + t * dim_, dim_};
  }
  std::span<double> row(std::size_t t) { return {data_.data() + t * dim_, dim_}; }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

// 16-bit mono PCM only. Rejects other encodings, channel counts, and any
// sample rate other than `expected_rate`.
Waveform read_wav(const std::filesystem::path& path, int expected_rate = 16000);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

std::size_t frame_count(std::size_t n_samples, std::size_t window, std::size_t hop);

// Centre frequency (Hz) of each mel filter, HTK scale.
std::vector<double> mel_centers_hz(const FeatureConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// n_mels × (fft_size/2 + 1) triangular filter weights.
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg);

// Hann-windowed power spectrum of each frame, then mel filtering and
// natural log with a 1e-10 floor.
FeatureMatrix log_mel(const Waveform& wave, const FeatureConfig& cfg);
// Per-utterance mean/variance normalization, population variance.
// Zero-variance columns are only mean-shifted.
FeatureMatrix cmvn(const FeatureMatrix& features);

// "FEAT" | u32 T | u32 F | T·F float32, little-endian.
void save_features(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace unist::audio
