#include "unist/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unist::augment {

namespace {

Band draw_band(std::size_t extent, int cap, Rng& rng) {
  const auto max_width = std::min<std::size_t>(static_cast<std::size_t>(std::max(cap, 0)), extent);
  Band b;
  b.width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_width)));
  b.start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(extent - b.width)));
  return b;
}

}  // namespace

FeatureMatrix spec_augment(const FeatureMatrix& features, const SpecAugmentParams& params,
                           Rng& rng, MaskTrace* trace) {
  FeatureMatrix out = features;
  const auto T = out.frames(), F = out.dim();
  for (int i = 0; i < params.time_masks; ++i) {
    const auto band = draw_band(T, params.time_mask_max, rng);
    for (auto t = band.start; t < band.start + band.width; ++t)
      for (std::size_t f = 0; f < F; ++f) out(t, f) = 0.0;
    if (trace) trace->time.push_back(band);
  }
  for (int i = 0; i < params.freq_masks; ++i) {
    const auto band = draw_band(F, params.freq_mask_max, rng);
    for (std::size_t t = 0; t < T; ++t)
      for (auto f = band.start; f < band.start + band.width; ++f) out(t, f) = 0.0;
    if (trace) trace->freq.push_back(band);
  }
  return out;
}

std::vector<std::size_t> stretch_indices(std::size_t frames, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("stretch factor must be positive");
  if (frames == 0) return {};
  const auto length = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(frames) / factor)));
  std::vector<std::size_t> idx(length);
  for (std::size_t i = 0; i < length; ++i) {
    const auto src = static_cast<std::size_t>(std::floor(static_cast<double>(i) * factor));
    idx[i] = std::min(frames - 1, src);
  }
  return idx;
}

FeatureMatrix stretch_by_factor(const FeatureMatrix& features, double factor) {
  const auto idx = stretch_indices(features.frames(), factor);
  FeatureMatrix out(idx.size(), features.dim());
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(features.row(idx[i]).begin(), features.row(idx[i]).end(), out.row(i).begin());
  return out;
}

FeatureMatrix time_stretch(const FeatureMatrix& features, const TimeStretchParams& params,
                           Rng& rng, std::vector<double>* factors) {
  if (!(params.low > 0.0) || params.low > params.high)
    throw std::invalid_argument("time_stretch: need 0 < low <= high");
  const auto T = features.frames();
  const auto window = params.window == 0 ? std::max<std::size_t>(T, 1) : params.window;
  std::vector<double> values;
  std::size_t rows = 0;
  for (std::size_t begin = 0; begin < T; begin += window) {
    const auto end = std::min(T, begin + window);
    const double s = rng.uniform_real(params.low, params.high);
    if (factors) factors->push_back(s);
    for (auto i : stretch_indices(end - begin, s)) {
      const auto r = features.row(begin + i);
      values.insert(values.end(), r.begin(), r.end());
      ++rows;
    }
  }
  return FeatureMatrix(rows, features.dim(), std::move(values));
}

}  // namespace unist::augment
