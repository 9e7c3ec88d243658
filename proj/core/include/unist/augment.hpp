#pragma once

#include <cstddef>
#include <vector>

#include "unist/audio_features.hpp"
#include "unist/rng.hpp"

namespace unist::augment {

using audio::FeatureMatrix;

struct SpecAugmentParams {
  int time_mask_max = 40;  // T
  int freq_mask_max = 4;   // F
  int time_masks = 2;      // m_T
  int freq_masks = 1;      // m_F
};

struct TimeStretchParams {
  // Frames per independently stretched window; 0 means the whole utterance.
  std::size_t window = 0;
  double low = 0.8;
  double high = 1.25;
};

struct Band {
  std::size_t start = 0;
  std::size_t width = 0;
};

// What spec_augment drew, in draw order.
struct MaskTrace {
  std::vector<Band> time;
  std::vector<Band> freq;
};

// Zeroes m_T time bands and m_F frequency bands. Widths are uniform on
// [0, min(cap, extent)], starts uniform on [0, extent - width].
FeatureMatrix spec_augment(const FeatureMatrix& features, const SpecAugmentParams& params,
                           Rng& rng, MaskTrace* trace = nullptr);

// Draws s ~ U[low, high] per window and resamples by frame selection.
FeatureMatrix time_stretch(const FeatureMatrix& features, const TimeStretchParams& params,
                           Rng& rng, std::vector<double>* factors = nullptr);

// Frame-selection rule for a fixed factor: output length max(1, round(T/s)),
// output frame i copies input frame min(T-1, floor(i*s)).
FeatureMatrix stretch_by_factor(const FeatureMatrix& features, double factor);
std::vector<std::size_t> stretch_indices(std::size_t frames, double factor);

}  // namespace unist::augment
