#include "unist/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "unist/error.hpp"

namespace unist::train {

namespace fs = std::filesystem;
using nn::Tensor;

// ---- task views -----------------------------------------------------------

std::vector<Sample> build_task_views(const std::vector<StRecord>& st,
                                     const std::vector<AsrRecord>& asr,
                                     const std::vector<NmtRecord>& nmt) {
  std::vector<Sample> out;
  out.reserve(3 * st.size() + asr.size() + nmt.size());
  for (const auto& r : st) {
    if (!r.transcript_ids)
      throw DataError("ST record '" + r.id + "' has no transcript");
    if (!r.speech) throw DataError("ST record '" + r.id + "' has no speech");
    const auto base = "st/" + r.id + "/";

    Sample s;
    s.id = base + "ST";
    s.task = Task::ST;
    s.src_lang = r.src_lang;
    s.tgt_lang = r.tgt_lang;
    s.speech = r.speech;
    s.tgt_ids = r.translation_ids;
    s.transcript_ids = *r.transcript_ids;
    out.push_back(s);

    Sample a;
    a.id = base + "ASR";
    a.task = Task::ASR;
    a.src_lang = r.src_lang;
    a.tgt_lang = r.src_lang;
    a.speech = r.speech;
    a.tgt_ids = *r.transcript_ids;
    a.transcript_ids = *r.transcript_ids;
    out.push_back(std::move(a));

    Sample n;
    n.id = base + "NMT";
    n.task = Task::NMT;
    n.src_lang = r.src_lang;
    n.tgt_lang = r.tgt_lang;
    n.src_ids = *r.transcript_ids;
    n.tgt_ids = r.translation_ids;
    out.push_back(std::move(n));
  }
  for (const auto& r : asr) {
    Sample a;
    a.id = "asr/" + r.id;
    a.task = Task::ASR;
    a.src_lang = r.lang;
    a.tgt_lang = r.lang;
    a.speech = r.speech;
    a.tgt_ids = r.transcript_ids;
    a.transcript_ids = r.transcript_ids;
    out.push_back(std::move(a));
  }
  for (const auto& r : nmt) {
    Sample n;
    n.id = "nmt/" + r.id;
    n.task = Task::NMT;
    n.src_lang = r.src_lang;
    n.tgt_lang = r.tgt_lang;
    n.src_ids = r.src_ids;
    n.tgt_ids = r.tgt_ids;
    out.push_back(std::move(n));
  }
  return out;
}

// ---- curriculum -----------------------------------------------------------

void PhaseConfig::validate() const {
  const auto where = "phase" + std::to_string(phase) + ": ";
  if (phase < 1 || phase > 3) throw ConfigError("phase number must be 1, 2 or 3");
  if (steps == 0) throw ConfigError(where + "steps must be positive");
  if (tasks.empty()) throw ConfigError(where + "no tasks");
  if (phase == 1 && tasks.count(Task::ST))
    throw ConfigError(where + "pre-training takes ASR and NMT only");
  if (phase == 3 && tasks != std::set<Task>{Task::ST})
    throw ConfigError(where + "fine-tuning takes ST only");
  if (kd && phase != 3) throw ConfigError(where + "distillation is only used in phase 3");
  for (double w : {weights.asr, weights.nmt, weights.st, weights.ctc_weight})
    if (!(w >= 0.0)) throw ConfigError(where + "loss weights must be >= 0");
}

std::vector<PhaseConfig> default_phases() {
  PhaseConfig p1;
  p1.phase = 1;
  p1.steps = 1000;
  p1.tasks = {Task::ASR, Task::NMT};
  p1.weights = {1.0, 1.0, 1.0, 0.3};

  PhaseConfig p2;
  p2.phase = 2;
  p2.steps = 2000;
  p2.tasks = {Task::ASR, Task::NMT, Task::ST};
  p2.weights = {0.5, 0.5, 1.0, 0.3};

  PhaseConfig p3;
  p3.phase = 3;
  p3.steps = 500;
  p3.tasks = {Task::ST};
  p3.weights = {0.5, 0.5, 1.0, 0.3};
  p3.time_stretch = false;
  p3.kd = true;
  return {p1, p2, p3};
}

std::size_t curriculum_phase(std::size_t global_step, const std::vector<PhaseConfig>& phases) {
  std::size_t end = 0;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    end += phases[i].steps;
    if (global_step < end) return i;
  }
  throw std::out_of_range("step " + std::to_string(global_step) + " is beyond the " +
                          std::to_string(end) + "-step budget");
}

double lr_inverse_sqrt(std::size_t step, double base_lr, std::size_t warmup) {
  if (step < 1 || warmup < 1) throw std::invalid_argument("lr_inverse_sqrt: step and warmup must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

// ---- optimizer ------------------------------------------------------------

OptimizerState OptimizerState::for_store(const ParameterStore& store) {
  OptimizerState s;
  for (const auto& [_, t] : store.entries()) {
    s.m.emplace_back(t.size(), 0.0);
    s.v.emplace_back(t.size(), 0.0);
  }
  return s;
}

ParameterStore OptimizerState::to_store(const ParameterStore& params) const {
  ParameterStore out;
  const auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i)
    out.add("m/" + entries[i].first, Tensor::from(entries[i].second.shape(), m[i]));
  for (std::size_t i = 0; i < entries.size(); ++i)
    out.add("v/" + entries[i].first, Tensor::from(entries[i].second.shape(), v[i]));
  return out;
}

OptimizerState OptimizerState::from_store(const ParameterStore& moments,
                                          const ParameterStore& params, std::uint64_t step) {
  auto s = for_store(params);
  s.step = step;
  const auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& mt = moments.get("m/" + entries[i].first);
    const auto& vt = moments.get("v/" + entries[i].first);
    if (mt.size() != s.m[i].size() || vt.size() != s.v[i].size())
      throw ConfigError("optimizer state does not match parameter " + entries[i].first);
    std::copy(mt.data().begin(), mt.data().end(), s.m[i].begin());
    std::copy(vt.data().begin(), vt.data().end(), s.v[i].begin());
  }
  return s;
}

void OptimizerState::round_to_float() {
  for (auto* moments : {&m, &v})
    for (auto& vec : *moments)
      for (auto& x : vec) x = static_cast<double>(static_cast<float>(x));
}

bool adam_step(ParameterStore& store, OptimizerState& state, double lr) {
  auto& entries = store.entries();
  if (state.m.size() != entries.size())
    throw std::invalid_argument("adam_step: optimizer state does not match the store");
  for (const auto& [_, t] : entries)
    for (double g : t.grad())
      if (!std::isfinite(g)) return false;

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = entries[i].second;
    const auto grad = t.grad();
    auto data = t.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  return true;
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : store.entries())
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, t] : store.entries())
      if (!t.grad().empty())
        for (auto& g : t.mutable_grad()) g *= factor;
  }
  return norm;
}

// ---- checkpoint averaging -------------------------------------------------

ParameterStore average_stores(const std::vector<ParameterStore>& stores) {
  if (stores.empty()) throw ConfigError("average: no checkpoints given");
  auto out = stores[0].clone();
  for (std::size_t k = 1; k < stores.size(); ++k) {
    if (!stores[k].same_layout(out))
      throw ConfigError("average: checkpoint " + std::to_string(k) +
                        " has a different architecture");
    auto& dst = out.entries();
    const auto& src = stores[k].entries();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i].second.mutable_data();
      const auto s = src[i].second.data();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(stores.size());
  if (stores.size() > 1)
    for (auto& [_, t] : out.entries())
      for (auto& x : t.mutable_data()) x *= inv;
  return out;
}

ParameterStore average_checkpoints(const std::vector<fs::path>& paths) {
  std::vector<ParameterStore> stores;
  stores.reserve(paths.size());
  for (const auto& p : paths) stores.push_back(nn::load_checkpoint(p));
  return average_stores(stores);
}

// ---- model files ----------------------------------------------------------

namespace {

fs::path meta_path(const fs::path& checkpoint) { return checkpoint.string() + ".meta"; }

}  // namespace

void save_model(const model::UnifiedModel& model, const fs::path& checkpoint) {
  nn::save_checkpoint(model.params(), checkpoint);
  std::ofstream meta(meta_path(checkpoint), std::ios::trunc);
  if (!meta) throw DataError("cannot write " + meta_path(checkpoint).string());
  for (const auto& [k, v] : model.config().to_entries()) meta << k << '=' << v << '\n';
}

model::ModelConfig load_model_config(const fs::path& checkpoint) {
  std::ifstream meta(meta_path(checkpoint));
  if (!meta) throw ConfigError("missing sidecar " + meta_path(checkpoint).string());
  model::ModelConfig cfg;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || !cfg.set(line.substr(0, eq), line.substr(eq + 1)))
      throw ConfigError(meta_path(checkpoint).string() + ": bad line '" + line + "'");
  }
  cfg.validate();
  return cfg;
}

model::UnifiedModel load_model(const fs::path& checkpoint) {
  auto cfg = load_model_config(checkpoint);
  return model::UnifiedModel(std::move(cfg), nn::load_checkpoint(checkpoint));
}

// ---- per-sample loss ------------------------------------------------------

namespace {

std::vector<int> with_eos(const std::vector<int>& ids) {
  auto out = ids;
  out.push_back(text::kEos);
  return out;
}

std::vector<int> with_bos(const std::vector<int>& ids) {
  std::vector<int> out{text::kBos};
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

}  // namespace

SampleLoss sample_loss(const model::UnifiedModel& model, const Sample& sample,
                       const LossContext& ctx) {
  model::ForwardContext fctx{ctx.training, ctx.rng, nullptr};
  SampleLoss out;
  model::EncoderStates enc;

  if (is_speech_task(sample.task)) {
    if (!sample.speech) throw DataError("sample '" + sample.id + "' has no speech");
    FeatureMatrix feats = *sample.speech;
    if (ctx.training && ctx.phase) {
      if (ctx.phase->time_stretch && ctx.time_stretch) {
        auto stretched = augment::time_stretch(feats, *ctx.time_stretch, *ctx.rng);
        if (stretched.frames() >= model.config().min_frames()) feats = std::move(stretched);
        else if (ctx.counters) ++ctx.counters->skipped_time_stretch;
      }
      if (ctx.phase->spec_augment && ctx.spec_augment)
        feats = augment::spec_augment(feats, *ctx.spec_augment, *ctx.rng);
    }
    auto speech = model.encode_speech(feats, sample.src_lang, fctx);
    enc = std::move(speech.encoder);
    const auto& ctc_target = sample.task == Task::ASR ? sample.tgt_ids : sample.transcript_ids;
    if (!ctc_target.empty()) {
      auto ctc = loss::ctc_loss(model.ctc_head(speech.frontend, fctx), ctc_target, text::kBlank);
      if (std::isinf(ctc.item())) {
        out.ctc_infeasible = true;
        if (ctx.counters) ++ctx.counters->infeasible_ctc;
      } else {
        out.ctc = nn::scale(ctc, 1.0 / static_cast<double>(ctc_target.size()));
      }
    }
  } else {
    enc = model.encode_text(with_eos(sample.src_ids), sample.src_lang, fctx);
  }

  const auto prefix = with_bos(sample.tgt_ids);
  const auto targets = with_eos(sample.tgt_ids);
  const auto log_probs = model.decoder_log_probs(enc, prefix, sample.tgt_lang, fctx);
  const auto ce = loss::cross_entropy(log_probs, targets, text::kPad, ctx.label_smoothing);
  out.ce = ce.item();

  const bool use_kd = ctx.teacher && ctx.phase && ctx.phase->kd && sample.task == Task::ST &&
                      ctx.kd.kd_weight > 0.0;
  if (!use_kd) {
    out.main = ce;
    return out;
  }
  Tensor teacher_probs;
  {
    nn::NoGradGuard no_grad;
    const auto tenc = ctx.teacher->encode_text(with_eos(sample.transcript_ids), sample.src_lang);
    auto tlp = ctx.teacher->decoder_log_probs(tenc, prefix, sample.tgt_lang);
    std::vector<double> probs(tlp.data().begin(), tlp.data().end());
    for (auto& p : probs) p = std::exp(p);
    teacher_probs = Tensor::from(tlp.shape(), std::move(probs));
  }
  out.main = loss::kd_loss(log_probs, teacher_probs, targets, text::kPad, ctx.kd,
                           ctx.label_smoothing);
  out.kd = (out.main.item() - (1.0 - ctx.kd.kd_weight) * out.ce) / ctx.kd.kd_weight;
  return out;
}

double evaluate_task_loss(const model::UnifiedModel& model, const std::vector<Sample>& samples,
                          Task task) {
  nn::NoGradGuard no_grad;
  LossContext ctx;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.task != task) continue;
    total += sample_loss(model, s, ctx).ce;
    ++n;
  }
  if (n == 0) throw DataError("no samples for task " + std::string(to_string(task)));
  return total / static_cast<double>(n);
}

// ---- trainer --------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (phases.empty()) throw ConfigError("no training phases");
  int last = 0;
  bool saw_phase1 = false;
  for (const auto& p : phases) {
    p.validate();
    if (p.phase <= last) throw ConfigError("phases must be in increasing order");
    last = p.phase;
    saw_phase1 = saw_phase1 || p.phase == 1;
    if (p.kd && !saw_phase1)
      throw ConfigError("phase" + std::to_string(p.phase) +
                        ": distillation needs phase 1 for the teacher");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (warmup < 1) throw ConfigError("train.warmup must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("train.label_smoothing must be in [0, 1)");
  if (kd.kd_weight < 0.0 || kd.kd_weight > 1.0) throw ConfigError("train.kd_weight must be in [0, 1]");
  if (log_interval < 1) throw ConfigError("train.log_interval must be >= 1");
  if (!(time_stretch.low > 0.0) || time_stretch.low > time_stretch.high)
    throw ConfigError("augment: need 0 < stretch_low <= stretch_high");
  if (decode.beam < 1) throw ConfigError("decode.beam must be >= 1");
}

namespace {

struct ResumeState {
  std::size_t global_step = 0;
  std::size_t phase_index = 0;
  std::size_t epoch = 0;
  std::uint64_t optimizer_step = 0;
  TrainCounters counters;
  std::optional<double> st_start;
  std::vector<std::string> checkpoints;
};

nlohmann::json to_json(const ResumeState& s) {
  nlohmann::json j;
  j["global_step"] = s.global_step;
  j["phase_index"] = s.phase_index;
  j["epoch"] = s.epoch;
  j["optimizer_step"] = s.optimizer_step;
  j["counters"] = {{"infeasible_ctc", s.counters.infeasible_ctc},
                   {"nonfinite_grad_samples", s.counters.nonfinite_grad_samples},
                   {"skipped_time_stretch", s.counters.skipped_time_stretch}};
  if (s.st_start) j["st_loss_at_finetune_start"] = *s.st_start;
  j["checkpoints"] = s.checkpoints;
  return j;
}

ResumeState from_json(const nlohmann::json& j) {
  ResumeState s;
  s.global_step = j.at("global_step").get<std::size_t>();
  s.phase_index = j.at("phase_index").get<std::size_t>();
  s.epoch = j.at("epoch").get<std::size_t>();
  s.optimizer_step = j.at("optimizer_step").get<std::uint64_t>();
  const auto& c = j.at("counters");
  s.counters.infeasible_ctc = c.at("infeasible_ctc").get<std::size_t>();
  s.counters.nonfinite_grad_samples = c.at("nonfinite_grad_samples").get<std::size_t>();
  s.counters.skipped_time_stretch = c.at("skipped_time_stretch").get<std::size_t>();
  if (j.contains("st_loss_at_finetune_start"))
    s.st_start = j.at("st_loss_at_finetune_start").get<double>();
  s.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Keeps the header and every line logged at or before `step`.
void truncate_log(const fs::path& path, std::size_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      keep.push_back(line);
      first = false;
      continue;
    }
    if (std::stoull(line.substr(0, line.find('\t'))) <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<Sample>& samples, const TrainOptions& opts)
      : cfg_(cfg),
        samples_(samples),
        opts_(opts),
        model_(cfg.model, mix64(cfg.seed)),
        optim_(OptimizerState::for_store(model_.params())) {}

  TrainResult run();

 private:
  std::vector<std::vector<std::size_t>> make_batches(std::size_t phase_index,
                                                     std::size_t epoch) const;
  void step(std::size_t phase_index, const std::vector<std::size_t>& batch, std::size_t epoch);
  void save_epoch(std::size_t next_phase, std::size_t next_epoch, bool phase1_done);
  void open_logs(bool resume);

  const TrainConfig& cfg_;
  const std::vector<Sample>& samples_;
  const TrainOptions& opts_;
  model::UnifiedModel model_;
  OptimizerState optim_;
  std::optional<model::UnifiedModel> teacher_;
  ResumeState state_;
  std::optional<std::size_t> last_optim_;
  std::ofstream log_;
  std::ofstream terms_;
};

std::vector<std::vector<std::size_t>> Trainer::make_batches(std::size_t phase_index,
                                                            std::size_t epoch) const {
  const auto& phase = cfg_.phases[phase_index];
  const std::uint64_t key = (static_cast<std::uint64_t>(phase.phase) << 32) | epoch;
  std::vector<std::vector<std::size_t>> batches;
  // Homogeneous batches per task; the number of batches per task follows its
  // data size, so tasks are sampled in proportion and all appear each epoch.
  for (Task task : phase.tasks) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples_.size(); ++i)
      if (samples_[i].task == task) idx.push_back(i);
    auto rng = Rng::derive(cfg_.seed, key, static_cast<std::uint64_t>(task) + 1);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    for (std::size_t b = 0; b < idx.size(); b += cfg_.batch_size)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + cfg_.batch_size)));
  }
  auto rng = Rng::derive(cfg_.seed, key, 0);
  std::shuffle(batches.begin(), batches.end(), rng.engine());
  return batches;
}

void Trainer::open_logs(bool resume) {
  const auto log_path = cfg_.output_dir / "train_log.tsv";
  const auto terms_path = cfg_.output_dir / "loss_terms.tsv";
  if (resume) {
    truncate_log(log_path, state_.global_step);
    truncate_log(terms_path, state_.global_step);
    log_.open(log_path, std::ios::app);
    terms_.open(terms_path, std::ios::app);
  } else {
    log_.open(log_path, std::ios::trunc);
    terms_.open(terms_path, std::ios::trunc);
    log_ << "step\tphase\ttask\tloss\tlr\n";
    terms_ << "step\tphase\ttask\tweight\ttask_loss\tce\tctc\tkd\tweighted\n";
  }
  if (!log_ || !terms_) throw DataError("cannot write logs in " + cfg_.output_dir.string());
}

void Trainer::step(std::size_t phase_index, const std::vector<std::size_t>& batch,
                   std::size_t epoch) {
  const auto& phase = cfg_.phases[phase_index];
  auto weights = phase.weights;
  weights.ctc_weight = cfg_.ctc_weight;
  const Task task = samples_[batch.front()].task;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::uint64_t epoch_key = (static_cast<std::uint64_t>(phase.phase) << 32) | epoch;

  model_.params().zero_grad();
  double task_loss = 0.0, ce_sum = 0.0, ctc_sum = 0.0, kd_sum = 0.0, weighted = 0.0;
  std::size_t ctc_n = 0;
  for (auto i : batch) {
    const auto& sample = samples_[i];
    auto rng = Rng::derive(cfg_.seed, sample.id, epoch_key);
    LossContext ctx;
    ctx.teacher = teacher_ ? &*teacher_ : nullptr;
    ctx.label_smoothing = cfg_.label_smoothing;
    ctx.kd = cfg_.kd;
    ctx.training = true;
    ctx.phase = &phase;
    ctx.spec_augment = &cfg_.spec_augment;
    ctx.time_stretch = &cfg_.time_stretch;
    ctx.rng = &rng;
    ctx.counters = &state_.counters;
    auto sl = sample_loss(model_, sample, ctx);

    std::map<Task, loss::TaskTerm> terms;
    terms[task] = loss::TaskTerm{sl.main, sl.ctc};
    const auto total = nn::scale(loss::multitask_loss(terms, weights), inv_n);
    if (!std::isfinite(total.item()))
      throw TrainingError("non-finite loss at step " + std::to_string(state_.global_step + 1) +
                          " (phase " + std::to_string(phase.phase) + ", sample '" + sample.id +
                          "', ce=" + fmt(sl.ce) + ")");
    total.backward();

    double term = sl.main.item();
    if (sl.ctc) {
      term += cfg_.ctc_weight * sl.ctc->item();
      ctc_sum += sl.ctc->item();
      ++ctc_n;
    }
    task_loss += term * inv_n;
    ce_sum += sl.ce * inv_n;
    kd_sum += sl.kd * inv_n;
    weighted += total.item();
  }

  const auto schedule_step =
      cfg_.reset_lr_per_phase
          ? state_.global_step + 1 -
                [&] {
                  std::size_t begin = 0;
                  for (std::size_t p = 0; p < phase_index; ++p) begin += cfg_.phases[p].steps;
                  return begin;
                }()
          : state_.global_step + 1;
  const double lr = lr_inverse_sqrt(schedule_step, cfg_.base_lr, cfg_.warmup);
  clip_grad_norm(model_.params(), cfg_.clip_norm);
  if (!adam_step(model_.params(), optim_, lr)) state_.counters.nonfinite_grad_samples += batch.size();
  ++state_.global_step;

  if (state_.global_step % cfg_.log_interval == 0) {
    const auto task_name = std::string(to_string(task));
    log_ << state_.global_step << '\t' << phase.phase << '\t' << task_name << '\t'
         << fmt(task_loss) << '\t' << fmt(lr) << '\n';
    terms_ << state_.global_step << '\t' << phase.phase << '\t' << task_name << '\t'
           << fmt(weights.of(task)) << '\t' << fmt(task_loss) << '\t' << fmt(ce_sum) << '\t'
           << fmt(ctc_n ? ctc_sum / static_cast<double>(ctc_n) : 0.0) << '\t' << fmt(kd_sum)
           << '\t' << fmt(weighted) << '\n';
    if (opts_.verbose)
      std::cerr << "step " << state_.global_step << " phase " << phase.phase << ' ' << task_name
                << " loss " << fmt(task_loss) << " lr " << fmt(lr) << '\n';
  }
}

void Trainer::save_epoch(std::size_t next_phase, std::size_t next_epoch, bool phase1_done) {
  // In-memory state is rounded to what the files hold, so a resumed run
  // continues from exactly the same numbers.
  model_.params().round_to_float();
  optim_.round_to_float();
  const auto name = "ckpt_" + std::to_string(state_.global_step) + ".bin";
  save_model(model_, cfg_.output_dir / name);
  if (phase1_done) save_model(model_, cfg_.output_dir / "teacher.bin");
  nn::save_checkpoint(optim_.to_store(model_.params()),
                      cfg_.output_dir / ("optim_" + std::to_string(state_.global_step) + ".bin"));
  if (state_.checkpoints.empty() || state_.checkpoints.back() != name)
    state_.checkpoints.push_back(name);
  state_.optimizer_step = optim_.step;
  state_.phase_index = next_phase;
  state_.epoch = next_epoch;
  log_.flush();
  terms_.flush();
  const auto tmp = cfg_.output_dir / "state.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(state_).dump(2) << '\n';
  }
  fs::rename(tmp, cfg_.output_dir / "state.json");
  // Only the newest optimizer state is a valid resume point.
  if (last_optim_ && *last_optim_ != state_.global_step)
    fs::remove(cfg_.output_dir / ("optim_" + std::to_string(*last_optim_) + ".bin"));
  last_optim_ = state_.global_step;
}

TrainResult Trainer::run() {
  cfg_.validate();
  fs::create_directories(cfg_.output_dir);

  for (const auto& phase : cfg_.phases) {
    const bool any = std::any_of(samples_.begin(), samples_.end(), [&](const Sample& s) {
      return phase.tasks.count(s.task) > 0;
    });
    if (!any)
      throw ConfigError("phase" + std::to_string(phase.phase) + " has no training data for its tasks");
  }

  if (opts_.resume && fs::exists(cfg_.output_dir / "state.json")) {
    std::ifstream in(cfg_.output_dir / "state.json");
    state_ = from_json(nlohmann::json::parse(in));
    const auto ckpt = cfg_.output_dir / state_.checkpoints.back();
    auto params = nn::load_checkpoint(ckpt);
    if (!params.same_layout(model_.params()))
      throw ConfigError("resume checkpoint does not match the model configuration");
    model_.params() = std::move(params);
    optim_ = OptimizerState::from_store(
        nn::load_checkpoint(cfg_.output_dir / ("optim_" + std::to_string(state_.global_step) + ".bin")),
        model_.params(), state_.optimizer_step);
    last_optim_ = state_.global_step;
    if (fs::exists(cfg_.output_dir / "teacher.bin")) teacher_.emplace(load_model(cfg_.output_dir / "teacher.bin"));
    open_logs(true);
  } else {
    state_ = ResumeState{};
    open_logs(false);
  }

  TrainResult result;
  std::size_t phase_begin = 0;
  for (std::size_t p = 0; p < state_.phase_index && p < cfg_.phases.size(); ++p)
    phase_begin += cfg_.phases[p].steps;

  for (std::size_t pi = state_.phase_index; pi < cfg_.phases.size(); ++pi) {
    const auto& phase = cfg_.phases[pi];
    const auto phase_end = phase_begin + phase.steps;
    const bool st_only = phase.tasks == std::set<Task>{Task::ST};
    if (st_only && state_.global_step == phase_begin)
      state_.st_start = evaluate_task_loss(model_, samples_, Task::ST);

    std::size_t epoch = pi == state_.phase_index ? state_.epoch : 0;
    while (state_.global_step < phase_end) {
      const auto batches = make_batches(pi, epoch);
      for (const auto& batch : batches) {
        if (state_.global_step >= phase_end) break;
        step(pi, batch, epoch);
        if (opts_.stop_after_step && state_.global_step == *opts_.stop_after_step) {
          result.steps = state_.global_step;
          result.counters = state_.counters;
          return result;
        }
      }
      ++epoch;
      const bool done = state_.global_step >= phase_end;
      save_epoch(done ? pi + 1 : pi, done ? 0 : epoch, done && phase.phase == 1);
      result.checkpoints.push_back(cfg_.output_dir / state_.checkpoints.back());
    }
    if (phase.phase == 1) teacher_.emplace(cfg_.model, model_.params().clone());
    phase_begin = phase_end;
  }

  result.steps = state_.global_step;
  result.completed = true;
  result.counters = state_.counters;
  result.st_loss_at_finetune_start = state_.st_start;
  const bool has_st_phase = std::any_of(cfg_.phases.begin(), cfg_.phases.end(), [](const PhaseConfig& p) {
    return p.tasks == std::set<Task>{Task::ST};
  });
  if (has_st_phase) result.st_loss_at_end = evaluate_task_loss(model_, samples_, Task::ST);

  nlohmann::json summary;
  summary["steps"] = result.steps;
  summary["counters"] = to_json(state_)["counters"];
  if (result.st_loss_at_finetune_start) summary["st_loss_at_finetune_start"] = *result.st_loss_at_finetune_start;
  if (result.st_loss_at_end) summary["st_loss_at_end"] = *result.st_loss_at_end;
  std::ofstream(cfg_.output_dir / "summary.json", std::ios::trunc) << summary.dump(2) << '\n';
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& samples,
                  const TrainOptions& options) {
  Trainer trainer(cfg, samples, options);
  return trainer.run();
}

}  // namespace unist::train
