#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "unist/audio_features.hpp"
#include "unist/error.hpp"

namespace {

namespace audio = unist::audio;
namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("unist_audio_" + name); }

// Minimal RIFF writer so the reader is tested against bytes it did not produce.
void write_raw_wav(const fs::path& path, int rate, int channels, int bits, int format,
                   const std::vector<std::int16_t>& samples) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(static_cast<std::uint16_t>(format));
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * bits / 8));
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(static_cast<std::uint16_t>(bits));
  f.write("data", 4);
  u32(data_bytes);
  f.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(data_bytes));
}

TEST(ReadWav, SilenceGivesZeros) {
  const auto path = temp_file("silence.wav");
  write_raw_wav(path, 16000, 1, 16, 1, std::vector<std::int16_t>(16000, 0));
  const auto w = audio::read_wav(path);
  EXPECT_EQ(w.sample_rate, 16000);
  ASSERT_EQ(w.samples.size(), 16000u);
  for (double s : w.samples) EXPECT_EQ(s, 0.0);
  fs::remove(path);
}

TEST(ReadWav, FullScaleSquareWave) {
  const auto path = temp_file("square.wav");
  std::vector<std::int16_t> pcm;
  for (int i = 0; i < 64; ++i) pcm.push_back(i % 2 ? -32767 : 32767);
  write_raw_wav(path, 16000, 1, 16, 1, pcm);
  const auto w = audio::read_wav(path);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    EXPECT_EQ(w.samples[i], (i % 2 ? -1.0 : 1.0) * 32767.0 / 32768.0);
  fs::remove(path);
}

TEST(ReadWav, RejectsOtherRatesAndFormats) {
  const auto path = temp_file("bad.wav");
  write_raw_wav(path, 8000, 1, 16, 1, std::vector<std::int16_t>(800, 0));
  try {
    audio::read_wav(path);
    FAIL() << "8 kHz file accepted";
  } catch (const unist::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported sample rate"), std::string::npos);
  }
  write_raw_wav(path, 16000, 2, 16, 1, std::vector<std::int16_t>(800, 0));
  EXPECT_THROW(audio::read_wav(path), unist::DataError);
  write_raw_wav(path, 16000, 1, 16, 3, std::vector<std::int16_t>(800, 0));
  EXPECT_THROW(audio::read_wav(path), unist::DataError);
  fs::remove(path);
  EXPECT_THROW(audio::read_wav(path), unist::DataError);
}

TEST(WriteWav, RoundTripWithinQuantization) {
  const auto path = temp_file("rt.wav");
  audio::Waveform w;
  for (int i = 0; i < 500; ++i) w.samples.push_back(std::sin(i * 0.05) * 0.9);
  audio::write_wav(path, w);
  const auto back = audio::read_wav(path);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768);
  fs::remove(path);
}

TEST(FrameCount, StandardWindows) {
  const audio::FeatureConfig cfg;
  EXPECT_EQ(cfg.window_samples(), 400u);
  EXPECT_EQ(cfg.hop_samples(), 160u);
  EXPECT_EQ(audio::frame_count(16000, 400, 160), 98u);
  EXPECT_EQ(audio::frame_count(400, 400, 160), 1u);
  EXPECT_EQ(audio::frame_count(399, 400, 160), 0u);
}

// Direct O(N^2) DFT of one windowed frame, then the same filterbank.
std::vector<double> direct_log_mel_frame(const std::vector<double>& x, const audio::FeatureConfig& cfg) {
  const auto win = cfg.window_samples(), n_fft = cfg.fft_size();
  std::vector<double> power(n_fft / 2 + 1);
  for (std::size_t k = 0; k < power.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < win; ++n) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (win - 1));
      acc += x[n] * hann * std::polar(1.0, -2.0 * std::numbers::pi * k * n / n_fft);
    }
    power[k] = std::norm(acc);
  }
  const auto bank = audio::mel_filterbank(cfg);
  std::vector<double> out;
  for (const auto& filt : bank) {
    double e = 0.0;
    for (std::size_t k = 0; k < power.size(); ++k) e += filt[k] * power[k];
    out.push_back(std::log(std::max(e, 1e-10)));
  }
  return out;
}

TEST(LogMel, SinePeaksInNearestBandAndMatchesDirectDft) {
  audio::FeatureConfig cfg;
  audio::Waveform w;
  for (int i = 0; i < 16000; ++i) w.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * i / 16000.0));
  const auto feats = audio::log_mel(w, cfg);
  ASSERT_EQ(feats.frames(), 98u);
  ASSERT_EQ(feats.dim(), 80u);

  const auto centers = audio::mel_centers_hz(cfg);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m)
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = m;

  for (std::size_t t : {0u, 40u, 97u}) {
    const auto row = feats.row(t);
    const auto argmax = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    EXPECT_EQ(argmax, nearest) << "frame " << t;
    const std::vector<double> frame(w.samples.begin() + t * 160, w.samples.begin() + t * 160 + 400);
    const auto oracle = direct_log_mel_frame(frame, cfg);
    for (std::size_t m = 0; m < oracle.size(); ++m) EXPECT_NEAR(row[m], oracle[m], 1e-8);
  }
}

TEST(LogMel, MelScaleRoundTrip) {
  for (double hz : {0.0, 20.0, 700.0, 1000.0, 8000.0}) EXPECT_NEAR(audio::mel_to_hz(audio::hz_to_mel(hz)), hz, 1e-9);
  EXPECT_NEAR(audio::hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-9);
}

TEST(Cmvn, Examples) {
  const auto c = audio::cmvn(audio::FeatureMatrix(5, 3, 7.0));
  for (double v : c.values()) EXPECT_EQ(v, 0.0);

  const auto y = audio::cmvn(audio::FeatureMatrix(2, 1, std::vector<double>{1.0, 3.0}));
  EXPECT_NEAR(y(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(y(1, 0), 1.0, 1e-12);

  audio::FeatureMatrix x(6, 2);
  for (std::size_t t = 0; t < 6; ++t) {
    x(t, 0) = std::sin(static_cast<double>(t));
    x(t, 1) = static_cast<double>(t * t);
  }
  const auto once = audio::cmvn(x);
  const auto twice = audio::cmvn(once);
  for (std::size_t i = 0; i < once.values().size(); ++i) EXPECT_NEAR(twice.values()[i], once.values()[i], 1e-6);
}

TEST(Features, FileRoundTrip) {
  const auto path = temp_file("f.feat");
  audio::FeatureMatrix m(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6.5});
  audio::save_features(m, path);
  EXPECT_EQ(audio::load_features(path), m);
  fs::remove(path);
}

}  // namespace
