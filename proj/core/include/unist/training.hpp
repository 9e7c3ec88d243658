#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unist/audio_features.hpp"
#include "unist/augment.hpp"
#include "unist/decoding.hpp"
#include "unist/losses.hpp"
#include "unist/model.hpp"
#include "unist/numerics.hpp"
#include "unist/task.hpp"
#include "unist/text.hpp"

namespace unist::train {

using audio::FeatureMatrix;
using nn::ParameterStore;
using text::LanguageId;

using SpeechPtr = std::shared_ptr<const FeatureMatrix>;

struct Sample {
  std::string id;
  Task task = Task::ST;
  LanguageId src_lang;
  LanguageId tgt_lang;
  SpeechPtr speech;                 // ASR, ST
  std::vector<int> src_ids;         // NMT
  std::vector<int> tgt_ids;         // transcript for ASR, translation otherwise
  std::vector<int> transcript_ids;  // ST, supervises CTC
};

// Speech with its transcript and one translation.
struct StRecord {
  std::string id;
  SpeechPtr speech;
  LanguageId src_lang;
  LanguageId tgt_lang;
  std::optional<std::vector<int>> transcript_ids;
  std::vector<int> translation_ids;
};

struct AsrRecord {
  std::string id;
  SpeechPtr speech;
  LanguageId lang;
  std::vector<int> transcript_ids;
};

struct NmtRecord {
  std::string id;
  LanguageId src_lang;
  LanguageId tgt_lang;
  std::vector<int> src_ids;
  std::vector<int> tgt_ids;
};

// Every ST triple also yields its speech-transcript pair as ASR and its
// transcript-translation pair as NMT. IDs carry provenance:
// "st/<id>/{ST,ASR,NMT}", "asr/<id>", "nmt/<id>".
std::vector<Sample> build_task_views(const std::vector<StRecord>& st,
                                     const std::vector<AsrRecord>& asr,
                                     const std::vector<NmtRecord>& nmt);

struct PhaseConfig {
  int phase = 1;
  std::size_t steps = 0;
  std::set<Task> tasks;
  loss::LossWeights weights;
  bool spec_augment = true;
  bool time_stretch = true;
  bool kd = false;

  void validate() const;
};

// The default three-step curriculum: ASR+NMT pre-training, joint multi-task
// learning (0.5/0.5/1.0), ST fine-tuning with distillation.
std::vector<PhaseConfig> default_phases();

// Index of the phase whose half-open step interval holds global_step.
// Throws std::out_of_range beyond the total budget.
std::size_t curriculum_phase(std::size_t global_step, const std::vector<PhaseConfig>& phases);

// base_lr · min(step / warmup, sqrt(warmup / step)), step >= 1.
double lr_inverse_sqrt(std::size_t step, double base_lr, std::size_t warmup);

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState for_store(const ParameterStore& store);
  // Moments as a checkpoint-format store ("m/<name>", "v/<name>").
  ParameterStore to_store(const ParameterStore& params) const;
  static OptimizerState from_store(const ParameterStore& moments, const ParameterStore& params,
                                   std::uint64_t step);
  void round_to_float();
};

// One bias-corrected Adam update using the gradients held by `store`.
// Returns false, leaving parameters and moments untouched, if any gradient
// is non-finite.
bool adam_step(ParameterStore& store, OptimizerState& state, double lr);

// Global L2 norm of all gradients; scaled down to max_norm when above it.
double clip_grad_norm(ParameterStore& store, double max_norm);

// Parameter-wise arithmetic mean. Throws ConfigError on layout mismatch.
ParameterStore average_checkpoints(const std::vector<std::filesystem::path>& paths);
ParameterStore average_stores(const std::vector<ParameterStore>& stores);

struct TrainConfig {
  model::ModelConfig model = model::ModelConfig::toy();
  std::uint64_t seed = 1;
  std::size_t batch_size = 8;
  double base_lr = 1e-3;
  std::size_t warmup = 2000;
  double label_smoothing = 0.1;
  double clip_norm = 1.0;
  bool reset_lr_per_phase = false;
  std::size_t log_interval = 1;
  double ctc_weight = 0.3;
  loss::KdConfig kd;
  std::vector<PhaseConfig> phases = default_phases();
  augment::SpecAugmentParams spec_augment;
  augment::TimeStretchParams time_stretch;
  decode::DecodeConfig decode;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;

  void validate() const;
};

// Plain-text key=value config with [model], [train], [phase1..3], [augment]
// and [decode] sections. Unknown sections or keys are errors. Relative paths
// resolve against `base_dir`.
TrainConfig parse_config(const std::string& contents, const std::filesystem::path& base_dir = {});
TrainConfig load_config(const std::filesystem::path& path);

struct TrainOptions {
  bool resume = false;
  // Return right after this global step without saving, as if killed.
  std::optional<std::size_t> stop_after_step;
  bool verbose = false;
};

struct TrainCounters {
  std::size_t infeasible_ctc = 0;
  std::size_t nonfinite_grad_samples = 0;
  std::size_t skipped_time_stretch = 0;
};

struct TrainResult {
  std::size_t steps = 0;
  bool completed = false;
  std::vector<std::filesystem::path> checkpoints;
  TrainCounters counters;
  // Mean unsmoothed ST cross-entropy over the training views, when a phase
  // trains ST only: at its first step and after its last.
  std::optional<double> st_loss_at_finetune_start;
  std::optional<double> st_loss_at_end;
};

// Runs the curriculum. Writes to cfg.output_dir:
//   ckpt_<step>.bin (+ .meta sidecar)   per epoch and at phase ends
//   optim_<step>.bin, state.json        resume point
//   teacher.bin                         parameters at the end of phase 1
//   train_log.tsv                       step, phase, task, loss, lr
//   loss_terms.tsv                      per-step weighted decomposition
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& samples,
                  const TrainOptions& options = {});

// Per-sample loss pieces under a given phase; exposed for tests and checks.
struct SampleLoss {
  nn::Tensor main;                // CE, or the KD mixture
  std::optional<nn::Tensor> ctc;  // length-normalized; absent when infeasible
  double ce = 0.0;
  double kd = 0.0;
  bool ctc_infeasible = false;
};

struct LossContext {
  const model::UnifiedModel* teacher = nullptr;  // KD phases
  double label_smoothing = 0.0;
  loss::KdConfig kd;
  bool training = false;  // dropout + augmentation
  const PhaseConfig* phase = nullptr;
  const augment::SpecAugmentParams* spec_augment = nullptr;
  const augment::TimeStretchParams* time_stretch = nullptr;
  Rng* rng = nullptr;
  TrainCounters* counters = nullptr;
};

SampleLoss sample_loss(const model::UnifiedModel& model, const Sample& sample,
                       const LossContext& ctx);

// Mean unsmoothed cross-entropy of `task` samples, no dropout or augmentation.
double evaluate_task_loss(const model::UnifiedModel& model, const std::vector<Sample>& samples,
                          Task task);

// "<ckpt>.meta" sidecar with the model configuration.
void save_model(const model::UnifiedModel& model, const std::filesystem::path& checkpoint);
model::UnifiedModel load_model(const std::filesystem::path& checkpoint);
model::ModelConfig load_model_config(const std::filesystem::path& checkpoint);

}  // namespace unist::train
