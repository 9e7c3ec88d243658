#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "unist/numerics.hpp"
#include "unist/task.hpp"

namespace unist::loss {

using nn::Tensor;

struct LossWeights {
  double asr = 0.5;
  double nmt = 0.5;
  double st = 1.0;
  double ctc_weight = 0.3;

  double of(Task task) const;
};

struct KdConfig {
  double kd_weight = 0.7;  // cross-entropy gets 1 - kd_weight
};

// Mean negative log-likelihood over non-pad targets, with optional label
// smoothing toward the uniform distribution. Throws when every target is pad.
Tensor cross_entropy(const Tensor& log_probs, std::span<const int> targets, int pad_id,
                     double label_smoothing = 0.0);

// -log P(target | log_probs) summed over all blank-interleaved alignments,
// computed with the forward algorithm in log space. Returns +inf (with zero
// gradient) when the frames cannot hold the target. Throws when the target
// contains the blank.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank_id);

// Forward-algorithm value on a plain T×V row-major grid.
double ctc_neg_log_likelihood(std::span<const double> log_probs, std::size_t frames,
                              std::size_t vocab, std::span<const int> target, int blank_id);
// Minimum frames needed to emit `target` (repeats need a blank in between).
std::size_t ctc_min_frames(std::span<const int> target);

// kd_weight · mean_t KL(teacher_t ‖ student_t) + (1 - kd_weight) · CE, over
// non-pad positions. teacher_probs is L×V with rows summing to one.
Tensor kd_loss(const Tensor& student_log_probs, const Tensor& teacher_probs,
               std::span<const int> targets, int pad_id, const KdConfig& cfg,
               double label_smoothing = 0.0);

struct TaskTerm {
  Tensor loss;
  std::optional<Tensor> ctc;  // speech tasks only
};

// Σ_task weight(task) · (loss + ctc_weight · ctc).
Tensor multitask_loss(const std::map<Task, TaskTerm>& per_task, const LossWeights& weights);

}  // namespace unist::loss
