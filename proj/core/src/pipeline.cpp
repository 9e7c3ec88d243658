#include "unist/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "unist/audio_features.hpp"
#include "unist/decoding.hpp"
#include "unist/error.hpp"
#include "unist/text.hpp"

namespace unist::pipeline {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(strip_cr(line));
  return lines;
}

}  // namespace

// ---- manifests ------------------------------------------------------------

fs::path Manifest::audio(const ManifestRow& row) const {
  fs::path p(row.audio_path);
  return p.is_absolute() ? p : path.parent_path() / p;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows)
    out << r.id << '\t' << r.audio_path << '\t' << r.n_frames << '\t' << r.src_lang << '\t'
        << r.tgt_lang << '\t' << r.src_text << '\t' << r.tgt_text << '\n';
}

Manifest read_manifest(const fs::path& path, const text::LanguageRegistry* languages) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kManifestHeader)
    throw DataError(where(path, 1) + ": missing or wrong manifest header");
  Manifest m;
  m.path = path;
  std::set<std::string> ids;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cols = split_tabs(lines[i]);
    const auto at = where(path, i + 1);
    if (cols.size() != 7)
      throw DataError(at + ": expected 7 columns, found " + std::to_string(cols.size()));
    ManifestRow r;
    r.id = cols[0];
    r.audio_path = cols[1];
    try {
      r.n_frames = std::stoull(cols[2]);
    } catch (const std::exception&) {
      throw DataError(at + ": bad n_frames '" + cols[2] + "'");
    }
    r.src_lang = cols[3];
    r.tgt_lang = cols[4];
    r.src_text = cols[5];
    r.tgt_text = cols[6];
    if (r.id.empty()) throw DataError(at + ": empty id");
    if (!ids.insert(r.id).second) throw DataError(at + ": duplicate id '" + r.id + "'");
    if (languages)
      for (const auto* code : {&r.src_lang, &r.tgt_lang})
        if (!languages->contains(*code))
          throw DataError(at + ": row '" + r.id + "': unregistered language '" + *code + "'");
    m.rows.push_back(std::move(r));
  }
  return m;
}

// ---- prepare-data ---------------------------------------------------------

namespace {

struct Utterance {
  std::string id;
  std::string src;
  std::string tgt;  // empty for ASR-only
  std::string transcript;
  std::string translation;
  fs::path feat;  // relative to out_dir
  std::size_t frames = 0;
};

struct TextPair {
  std::string id;
  std::string src, tgt;
  std::string src_text, tgt_text;
};

std::vector<std::string> language_dirs(const fs::path& raw) {
  if (!fs::is_directory(raw)) throw DataError("raw directory " + raw.string() + " not found");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(raw))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

PrepareResult prepare_data(const fs::path& raw_dir, const fs::path& out_dir,
                           const train::TrainConfig& cfg) {
  cfg.model.validate();
  const text::LanguageRegistry languages(cfg.model.languages);
  audio::FeatureConfig fcfg;
  fcfg.n_mels = cfg.model.n_mels;
  fcfg.validate();

  std::set<std::string> dev_ids;
  if (fs::exists(raw_dir / "dev.lst"))
    for (const auto& l : read_lines(raw_dir / "dev.lst"))
      if (!l.empty()) dev_ids.insert(l);

  std::vector<Utterance> utts;
  std::vector<TextPair> pairs;
  std::set<std::string> speech_ids, text_ids;

  for (const auto& src : language_dirs(raw_dir)) {
    const auto dir = raw_dir / src;
    if (!languages.contains(src))
      throw DataError(dir.string() + ": unregistered language '" + src + "'");

    const auto utt_file = dir / "utterances.tsv";
    if (fs::exists(utt_file)) {
      const auto lines = read_lines(utt_file);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto at = where(utt_file, i + 1);
        const auto cols = split_tabs(lines[i]);
        if (cols.size() != 4)
          throw DataError(at + ": expected 4 columns (id, transcript, tgt_lang, translation), found " +
                          std::to_string(cols.size()));
        Utterance u{cols[0], src, cols[2] == "-" ? "" : cols[2], cols[1], cols[3], {}, 0};
        if (u.id.empty()) throw DataError(at + ": empty id");
        if (!speech_ids.insert(u.id).second) throw DataError(at + ": duplicate id '" + u.id + "'");
        if (text::split_words(u.transcript).empty())
          throw DataError(at + ": row '" + u.id + "': empty transcript");
        if (!u.tgt.empty()) {
          if (!languages.contains(u.tgt))
            throw DataError(at + ": row '" + u.id + "': unregistered language '" + u.tgt + "'");
          if (text::split_words(u.translation).empty())
            throw DataError(at + ": row '" + u.id + "': empty translation");
        }
        const auto wav = dir / "wav" / (u.id + ".wav");
        audio::Waveform wave;
        try {
          wave = audio::read_wav(wav, fcfg.sample_rate);
        } catch (const std::exception& e) {
          throw DataError(at + ": row '" + u.id + "': " + e.what());
        }
        const auto feats = audio::cmvn(audio::log_mel(wave, fcfg));
        if (feats.frames() == 0)
          throw DataError(at + ": row '" + u.id + "': audio shorter than one frame");
        u.feat = fs::path("feats") / src / (u.id + ".feat");
        fs::create_directories(out_dir / u.feat.parent_path());
        audio::save_features(feats, out_dir / u.feat);
        u.frames = feats.frames();
        utts.push_back(std::move(u));
      }
    }

    const auto text_file = dir / "text.tsv";
    if (fs::exists(text_file)) {
      const auto lines = read_lines(text_file);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto at = where(text_file, i + 1);
        const auto cols = split_tabs(lines[i]);
        if (cols.size() != 4)
          throw DataError(at + ": expected 4 columns (id, tgt_lang, src_text, tgt_text), found " +
                          std::to_string(cols.size()));
        TextPair p{cols[0], src, cols[1], cols[2], cols[3]};
        if (p.id.empty()) throw DataError(at + ": empty id");
        if (!text_ids.insert(p.id).second) throw DataError(at + ": duplicate id '" + p.id + "'");
        if (!languages.contains(p.tgt))
          throw DataError(at + ": row '" + p.id + "': unregistered language '" + p.tgt + "'");
        if (text::split_words(p.src_text).empty() || text::split_words(p.tgt_text).empty())
          throw DataError(at + ": row '" + p.id + "': empty text");
        pairs.push_back(std::move(p));
      }
    }
  }

  for (const auto& id : dev_ids)
    if (!speech_ids.count(id) && !text_ids.count(id))
      throw DataError((raw_dir / "dev.lst").string() + ": unknown id '" + id + "'");

  std::vector<std::string> corpus;
  for (const auto& u : utts) {
    if (dev_ids.count(u.id)) continue;
    corpus.push_back(u.transcript);
    if (!u.tgt.empty()) corpus.push_back(u.translation);
  }
  for (const auto& p : pairs) {
    if (dev_ids.count(p.id)) continue;
    corpus.push_back(p.src_text);
    corpus.push_back(p.tgt_text);
  }
  if (corpus.empty()) throw DataError(raw_dir.string() + ": no training text found");

  fs::create_directories(out_dir);
  text::Vocabulary vocab;
  try {
    vocab = text::train_bpe(corpus, static_cast<std::size_t>(cfg.model.vocab_size));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model.vocab_size too small for the corpus: ") + e.what());
  }
  vocab.save(out_dir / "vocab.txt");

  std::vector<ManifestRow> train_st, train_asr, train_nmt, dev_st, dev_asr, dev_nmt;
  for (const auto& u : utts) {
    const bool dev = dev_ids.count(u.id) > 0;
    const ManifestRow asr{u.id, u.feat.string(), u.frames, u.src, u.src, u.transcript, u.transcript};
    if (u.tgt.empty()) {
      (dev ? dev_asr : train_asr).push_back(asr);
    } else {
      (dev ? dev_st : train_st)
          .push_back({u.id, u.feat.string(), u.frames, u.src, u.tgt, u.transcript, u.translation});
      // Dev ASR covers every held-out utterance; in training the ST rows
      // already produce their ASR view.
      if (dev) dev_asr.push_back(asr);
    }
  }
  for (const auto& p : pairs)
    (dev_ids.count(p.id) ? dev_nmt : train_nmt).push_back({p.id, "-", 0, p.src, p.tgt, p.src_text, p.tgt_text});

  write_manifest(out_dir / "train_st.tsv", train_st);
  write_manifest(out_dir / "train_asr.tsv", train_asr);
  write_manifest(out_dir / "train_nmt.tsv", train_nmt);
  write_manifest(out_dir / "dev_st.tsv", dev_st);
  write_manifest(out_dir / "dev_asr.tsv", dev_asr);
  write_manifest(out_dir / "dev_nmt.tsv", dev_nmt);

  return {train_st.size(), train_asr.size(), train_nmt.size(),
          dev_st.size(),   dev_asr.size(),   dev_nmt.size(), vocab.size()};
}

// ---- training -------------------------------------------------------------

namespace {

text::Vocabulary load_vocab_for(const fs::path& path, const model::ModelConfig& model) {
  auto vocab = text::Vocabulary::load(path);
  if (vocab.size() > static_cast<std::size_t>(model.vocab_size))
    throw ConfigError(path.string() + " has " + std::to_string(vocab.size()) +
                      " tokens but model.vocab_size is " + std::to_string(model.vocab_size));
  return vocab;
}

train::SpeechPtr load_speech(const Manifest& m, const ManifestRow& row) {
  if (!row.has_audio()) throw DataError(m.path.string() + ": row '" + row.id + "' has no audio");
  auto feats = std::make_shared<const audio::FeatureMatrix>(audio::load_features(m.audio(row)));
  if (feats->frames() != row.n_frames)
    throw DataError(m.path.string() + ": row '" + row.id + "': n_frames " +
                    std::to_string(row.n_frames) + " but the feature file has " +
                    std::to_string(feats->frames()));
  return feats;
}

}  // namespace

std::vector<train::Sample> load_training_samples(const fs::path& data_dir,
                                                 const model::ModelConfig& model) {
  const text::LanguageRegistry languages(model.languages);
  const auto vocab = load_vocab_for(data_dir / "vocab.txt", model);
  auto enc = [&](const std::string& s) { return text::encode(s, vocab); };

  std::vector<train::StRecord> st;
  std::vector<train::AsrRecord> asr;
  std::vector<train::NmtRecord> nmt;
  if (fs::exists(data_dir / "train_st.tsv")) {
    const auto m = read_manifest(data_dir / "train_st.tsv", &languages);
    for (const auto& r : m.rows)
      st.push_back({r.id, load_speech(m, r), languages.require(r.src_lang),
                    languages.require(r.tgt_lang), enc(r.src_text), enc(r.tgt_text)});
  }
  if (fs::exists(data_dir / "train_asr.tsv")) {
    const auto m = read_manifest(data_dir / "train_asr.tsv", &languages);
    for (const auto& r : m.rows)
      asr.push_back({r.id, load_speech(m, r), languages.require(r.src_lang), enc(r.src_text)});
  }
  if (fs::exists(data_dir / "train_nmt.tsv")) {
    const auto m = read_manifest(data_dir / "train_nmt.tsv", &languages);
    for (const auto& r : m.rows)
      nmt.push_back({r.id, languages.require(r.src_lang), languages.require(r.tgt_lang),
                     enc(r.src_text), enc(r.tgt_text)});
  }
  return train::build_task_views(st, asr, nmt);
}

train::TrainResult run_train(const TrainRequest& request) {
  auto cfg = train::load_config(request.config);
  if (request.seed) cfg.seed = *request.seed;
  if (request.output_dir) cfg.output_dir = *request.output_dir;
  if (cfg.data_dir.empty()) throw ConfigError("train.data_dir is not set");
  if (cfg.output_dir.empty()) throw ConfigError("train.output_dir is not set");
  const auto samples = load_training_samples(cfg.data_dir, cfg.model);
  return train::train(cfg, samples, request.options);
}

// ---- decoding and scoring -------------------------------------------------

namespace {

const std::string& reference_for(const ManifestRow& row, Task task) {
  return task == Task::ASR ? row.src_text : row.tgt_text;
}

metrics::EvalReport score(std::span<const std::string> hyps, std::span<const std::string> refs,
                          Task task) {
  return task == Task::ASR ? metrics::wer_report(hyps, refs) : metrics::bleu_report(hyps, refs);
}

std::vector<model::UnifiedModel> load_compatible(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw ConfigError("no checkpoints given");
  std::vector<model::UnifiedModel> models;
  const auto first = train::load_model_config(paths.front());
  for (const auto& p : paths) {
    if (train::load_model_config(p) != first)
      throw ConfigError("incompatible checkpoints: " + paths.front().string() + " and " +
                        p.string() + " have different model configurations");
    models.push_back(train::load_model(p));
  }
  return models;
}

}  // namespace

DecodeResult run_decode(const DecodeRequest& request) {
  const auto models = load_compatible(request.checkpoints);
  const auto& mcfg = models.front().config();
  const text::LanguageRegistry languages(mcfg.languages);
  const auto manifest = read_manifest(request.manifest, &languages);
  const auto vocab = load_vocab_for(
      request.vocab.empty() ? request.manifest.parent_path() / "vocab.txt" : request.vocab, mcfg);
  if (request.tgt_lang) languages.require(*request.tgt_lang);

  DecodeResult out;
  std::vector<std::string> scored_hyps, scored_refs;
  for (const auto& row : manifest.rows) {
    const auto src = languages.require(row.src_lang);
    const auto tgt_code =
        request.task == Task::ASR ? row.src_lang : request.tgt_lang.value_or(row.tgt_lang);
    const auto tgt = languages.require(tgt_code);

    auto dcfg = request.decode;
    std::vector<model::EncoderStates> encodings;
    if (is_speech_task(request.task)) {
      const auto feats = load_speech(manifest, row);
      if (dcfg.max_len == 0) dcfg.max_len = decode::speech_max_len(feats->frames());
      for (const auto& m : models) encodings.push_back(m.encode_speech(*feats, src).encoder);
    } else {
      auto ids = text::encode(row.src_text, vocab);
      if (dcfg.max_len == 0) dcfg.max_len = decode::text_max_len(ids.size());
      ids.push_back(text::kEos);
      for (const auto& m : models) encodings.push_back(m.encode_text(ids, src));
    }

    std::vector<decode::ModelScorer> scorers;
    scorers.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i)
      scorers.emplace_back(models[i], std::move(encodings[i]), tgt);
    std::vector<const decode::StepScorer*> ptrs;
    for (const auto& s : scorers) ptrs.push_back(&s);

    const auto best = decode::beam_search(ptrs, dcfg);
    std::vector<int> ids(best.ids.begin() + 1, best.ids.end());
    if (!ids.empty() && ids.back() == text::kEos) ids.pop_back();
    out.hypotheses.push_back(text::decode(ids, vocab));
    out.scores.push_back(best.normalized(dcfg.length_penalty));

    const bool same_language = request.task == Task::ASR || tgt_code == row.tgt_lang;
    if (same_language) {
      scored_hyps.push_back(out.hypotheses.back());
      scored_refs.push_back(reference_for(row, request.task));
    }
  }
  if (!scored_hyps.empty()) out.report = score(scored_hyps, scored_refs, request.task);

  if (request.output) {
    std::ofstream f(*request.output, std::ios::trunc);
    if (!f) throw DataError("cannot write " + request.output->string());
    for (std::size_t i = 0; i < out.hypotheses.size(); ++i) {
      f << out.hypotheses[i];
      if (request.with_scores) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", out.scores[i]);
        f << '\t' << buf;
      }
      f << '\n';
    }
  }
  return out;
}

metrics::EvalReport evaluate_file(const fs::path& hypotheses, const fs::path& manifest, Task task) {
  const auto m = read_manifest(manifest);
  auto hyps = read_lines(hypotheses);
  if (hyps.size() != m.rows.size())
    throw DataError(hypotheses.string() + ": " + std::to_string(hyps.size()) +
                    " hypotheses for " + std::to_string(m.rows.size()) + " manifest rows");
  for (auto& h : hyps) {
    const auto tab = h.rfind('\t');
    if (tab != std::string::npos) h.resize(tab);
  }
  std::vector<std::string> refs;
  for (const auto& r : m.rows) refs.push_back(reference_for(r, task));
  return score(hyps, refs, task);
}

// ---- checkpoint averaging -------------------------------------------------

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("checkpoint directory " + dir.string() + " not found");
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || e.path().extension() != ".bin") continue;
    const auto digits = name.substr(5, name.size() - 9);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    found.emplace_back(std::stoull(digits), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [_, p] : found) out.push_back(std::move(p));
  return out;
}

void average_files(const std::vector<fs::path>& inputs, const fs::path& output) {
  if (inputs.empty()) throw ConfigError("average: no checkpoints given");
  const auto cfg = train::load_model_config(inputs.front());
  for (const auto& p : inputs)
    if (train::load_model_config(p) != cfg)
      throw ConfigError("average: " + p.string() + " has a different architecture");
  const model::UnifiedModel averaged(cfg, train::average_checkpoints(inputs));
  train::save_model(averaged, output);
}

std::vector<fs::path> average_last(const fs::path& dir, std::size_t k, const fs::path& output) {
  if (k == 0) throw ConfigError("average: k must be positive");
  auto all = list_checkpoints(dir);
  if (all.empty()) throw ConfigError("no ckpt_<step>.bin files in " + dir.string());
  if (all.size() > k) all.erase(all.begin(), all.end() - static_cast<std::ptrdiff_t>(k));
  average_files(all, output);
  return all;
}

}  // namespace unist::pipeline
