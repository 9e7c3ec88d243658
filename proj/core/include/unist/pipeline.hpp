#pragma once

// Operator-level entry points behind the `unist` command: data preparation,
// training, decoding, scoring and checkpoint averaging.
//
// Raw corpus layout read by prepare_data:
//
//   <raw>/<src>/wav/<id>.wav       16 kHz mono PCM16, one per utterance
//   <raw>/<src>/utterances.tsv     id, transcript, tgt_lang, translation
//                                  ("-" in the last two for ASR-only rows)
//   <raw>/<src>/text.tsv           id, tgt_lang, src_text, tgt_text (optional)
//   <raw>/dev.lst                  ids held out for dev (optional)
//
// <src> directories and tgt_lang values must be registered model languages.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unist/metrics.hpp"
#include "unist/task.hpp"
#include "unist/training.hpp"

namespace unist::pipeline {

namespace fs = std::filesystem;

struct ManifestRow {
  std::string id;
  std::string audio_path = "-";  // feature file, relative to the manifest; "-" for text
  std::size_t n_frames = 0;
  std::string src_lang;
  std::string tgt_lang;
  std::string src_text;
  std::string tgt_text;

  bool has_audio() const { return audio_path != "-"; }
};

struct Manifest {
  fs::path path;  // where it was read from; audio paths resolve against its directory
  std::vector<ManifestRow> rows;

  fs::path audio(const ManifestRow& row) const;
};

inline constexpr const char* kManifestHeader =
    "id\taudio_path\tn_frames\tsrc_lang\ttgt_lang\tsrc_text\ttgt_text";

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows);
// Validates the header, column count, unique ids and, when given, language
// registration. Errors are DataError naming file and line.
Manifest read_manifest(const fs::path& path, const text::LanguageRegistry* languages = nullptr);

struct PrepareResult {
  std::size_t st_train = 0, asr_train = 0, nmt_train = 0;
  std::size_t st_dev = 0, asr_dev = 0, nmt_dev = 0;
  std::size_t vocab_size = 0;
};

// Writes feats/<src>/<id>.feat, {train,dev}_{st,asr,nmt}.tsv and vocab.txt
// into out_dir. Feature size, subword budget and languages come from cfg.model.
PrepareResult prepare_data(const fs::path& raw_dir, const fs::path& out_dir,
                           const train::TrainConfig& cfg);

// Reads train_{st,asr,nmt}.tsv and vocab.txt from data_dir and expands them
// with build_task_views.
std::vector<train::Sample> load_training_samples(const fs::path& data_dir,
                                                 const model::ModelConfig& model);

struct TrainRequest {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> output_dir;
  train::TrainOptions options;
};

train::TrainResult run_train(const TrainRequest& request);

struct DecodeRequest {
  std::vector<fs::path> checkpoints;  // several = ensemble
  fs::path manifest;
  fs::path vocab;
  Task task = Task::ST;
  // Decode into this language instead of the manifest's. Rows whose
  // reference language differs are not scored.
  std::optional<std::string> tgt_lang;
  // max_len 0 picks the length heuristic; min_len 1 keeps outputs non-empty.
  decode::DecodeConfig decode{5, 0, 1, 1.0};
  std::optional<fs::path> output;
  bool with_scores = false;
};

struct DecodeResult {
  std::vector<std::string> hypotheses;
  std::vector<double> scores;  // length-normalized
  std::optional<metrics::EvalReport> report;
};

DecodeResult run_decode(const DecodeRequest& request);

// Scores a hypothesis file (optionally with a trailing score column) against
// a manifest: BLEU for ST/NMT, WER for ASR.
metrics::EvalReport evaluate_file(const fs::path& hypotheses, const fs::path& manifest, Task task);

// Checkpoints named ckpt_<step>.bin in `dir`, ascending by step.
std::vector<fs::path> list_checkpoints(const fs::path& dir);
// Averages the last k checkpoints of `dir` (or all if fewer) into `output`,
// with a matching .meta sidecar. Returns the inputs used.
std::vector<fs::path> average_last(const fs::path& dir, std::size_t k, const fs::path& output);
void average_files(const std::vector<fs::path>& inputs, const fs::path& output);

}  // namespace unist::pipeline
