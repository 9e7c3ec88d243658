// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).
//
//   unist_acceptance [--work DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "oracles.hpp"
#include "tiny_corpus.hpp"
#include "unist/augment.hpp"
#include "unist/decoding.hpp"
#include "unist/losses.hpp"
#include "unist/metrics.hpp"
#include "unist/model.hpp"
#include "unist/pipeline.hpp"
#include "unist/toydata.hpp"
#include "unist/training.hpp"

namespace {

namespace fs = std::filesystem;
namespace nn = unist::nn;
namespace loss = unist::loss;
namespace train = unist::train;
namespace decode = unist::decode;
namespace augment = unist::augment;
namespace metrics = unist::metrics;
namespace pipeline = unist::pipeline;
using unist::Rng;
using unist::Task;
using unist::testing::grad_check;
using unist::testing::random_leaf;
using unist::testing::weighted_sum;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path g_work;

// ---- 1: gradients ---------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(11);
  std::vector<std::pair<std::string, double>> errors;
  auto check = [&](const std::string& name, const std::function<nn::Tensor()>& f,
                   std::vector<nn::Tensor*> leaves) { errors.emplace_back(name, grad_check(f, leaves)); };

  auto a = random_leaf({3, 4}, rng), b = random_leaf({4, 5}, rng), c = random_leaf({3, 4}, rng);
  auto bt = random_leaf({5, 4}, rng), row = random_leaf({4}, rng);
  check("matmul", [&] { return weighted_sum(nn::matmul(a, b)); }, {&a, &b});
  check("matmul_nt", [&] { return weighted_sum(nn::matmul_nt(a, bt)); }, {&a, &bt});
  check("transpose", [&] { return weighted_sum(nn::transpose(a)); }, {&a});
  check("add", [&] { return weighted_sum(nn::add(a, c)); }, {&a, &c});
  check("sub", [&] { return weighted_sum(nn::sub(a, c)); }, {&a, &c});
  check("mul", [&] { return weighted_sum(nn::mul(a, c)); }, {&a, &c});
  check("add_row", [&] { return weighted_sum(nn::add_row(a, row)); }, {&a, &row});
  check("scale", [&] { return weighted_sum(nn::scale(a, -1.7)); }, {&a});
  // keep relu inputs away from the kink so the finite difference is smooth
  auto r = random_leaf({3, 4}, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < r.size(); i += 2) r.mutable_data()[i] *= -1.0;
  check("relu", [&] { return weighted_sum(nn::relu(r)); }, {&r});
  check("gelu", [&] { return weighted_sum(nn::gelu(a)); }, {&a});
  check("softmax_rows", [&] { return weighted_sum(nn::softmax_rows(a)); }, {&a});
  check("log_softmax_rows", [&] { return weighted_sum(nn::log_softmax_rows(a)); }, {&a});
  auto gain = random_leaf({4}, rng, 0.5, 1.5), bias = random_leaf({4}, rng);
  check("layer_norm", [&] { return weighted_sum(nn::layer_norm(a, gain, bias)); }, {&a, &gain, &bias});
  auto x = random_leaf({7, 3}, rng), w = random_leaf({9, 2}, rng), cb = random_leaf({2}, rng);
  check("conv1d stride 1", [&] { return weighted_sum(nn::conv1d(x, w, cb, 1)); }, {&x, &w, &cb});
  check("conv1d stride 2", [&] { return weighted_sum(nn::conv1d(x, w, cb, 2)); }, {&x, &w, &cb});
  const std::vector<int> ids{2, 0, 2, 1};
  check("gather_rows", [&] { return weighted_sum(nn::gather_rows(a, ids)); }, {&a});
  check("slice_cols", [&] { return weighted_sum(nn::slice_cols(a, 1, 3)); }, {&a});
  check("slice_rows", [&] { return weighted_sum(nn::slice_rows(a, 1, 3)); }, {&a});
  check("concat_cols", [&] {
    const std::vector<nn::Tensor> parts{a, c};
    return weighted_sum(nn::concat_cols(parts));
  }, {&a, &c});
  check("sum", [&] { return nn::sum(nn::mul(a, a)); }, {&a});
  check("mean", [&] { return nn::mean(nn::mul(a, c)); }, {&a, &c});
  check("dropout", [&] {
    Rng mask(5);
    return weighted_sum(nn::dropout(a, 0.3, mask));
  }, {&a});

  auto logits = random_leaf({5, 6}, rng);
  const std::vector<int> targets{1, 5, 2, 0, 0};
  check("cross_entropy", [&] { return loss::cross_entropy(nn::log_softmax_rows(logits), targets, 0, 0.1); },
        {&logits});
  const std::vector<int> ctc_target{2, 3, 3};
  auto ctc_logits = random_leaf({7, 6}, rng);
  check("ctc_loss", [&] { return loss::ctc_loss(nn::log_softmax_rows(ctc_logits), ctc_target, 4); },
        {&ctc_logits});
  const auto teacher = nn::softmax_rows(random_leaf({5, 6}, rng)).detach();
  check("kd_loss", [&] {
    return loss::kd_loss(nn::log_softmax_rows(logits), teacher, targets, 0, {}, 0.1);
  }, {&logits});
  auto l1 = random_leaf({1}, rng), l2 = random_leaf({1}, rng), l3 = random_leaf({1}, rng);
  check("multitask_loss", [&] {
    std::map<Task, loss::TaskTerm> terms;
    terms[Task::ASR] = {nn::sum(nn::mul(l1, l1)), nn::sum(l2)};
    terms[Task::NMT] = {nn::sum(nn::mul(l2, l3)), std::nullopt};
    terms[Task::ST] = {nn::sum(nn::mul(l3, l3)), nn::sum(l1)};
    return loss::multitask_loss(terms, {});
  }, {&l1, &l2, &l3});

  double per_op = 0.0;
  std::string worst_op;
  for (const auto& [name, e] : errors)
    if (e >= per_op) {
      per_op = e;
      worst_op = name;
    }

  // End to end: one ST sample through the toy model, 1% of the weights.
  auto cfg = unist::model::ModelConfig::toy();
  cfg.dropout = 0.0;
  unist::model::UnifiedModel model(cfg, 21);
  Rng data(22);
  train::Sample s;
  s.id = "e2e";
  s.task = Task::ST;
  s.src_lang = {"es"};
  s.tgt_lang = {"en"};
  s.speech = unist::testing::random_speech(data, 48, 40);
  s.transcript_ids = {20, 31, 42};
  s.tgt_ids = {50, 61, 72, 83};
  train::LossContext ctx;
  ctx.label_smoothing = 0.1;
  const auto sample_total = [&] {
    auto out = train::sample_loss(model, s, ctx);
    return out.ctc ? nn::add(out.main, nn::scale(*out.ctc, 0.3)) : out.main;
  };
  std::vector<nn::Tensor*> leaves;
  std::vector<std::vector<std::size_t>> picks;
  std::size_t picked = 0;
  Rng pick(23);
  for (auto& [name, t] : model.params().entries()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (pick.uniform_real(0.0, 1.0) < 0.01) idx.push_back(i);
    if (idx.empty()) continue;
    picked += idx.size();
    leaves.push_back(&t);
    picks.push_back(std::move(idx));
  }
  const double e2e = grad_check(sample_total, leaves, &picks);

  Outcome o;
  o.pass = per_op < 1e-4 && e2e < 1e-3 && seconds_since(t0) < 120.0;
  o.detail = std::to_string(errors.size()) + " ops, worst " + worst_op + " " + fmt("%.2e", per_op) +
             " (< 1e-4); end-to-end ST loss on " + std::to_string(picked) + " of " +
             std::to_string(model.params().scalar_count()) + " weights " + fmt("%.2e", e2e) +
             " (< 1e-3); " + fmt("%.1f s", seconds_since(t0));
  return o;
}

// ---- 2: CTC ---------------------------------------------------------------

Outcome ctc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(31);
  double worst = 0.0;
  std::size_t cases = 0, inf_cases = 0;
  bool agree = true;
  for (std::size_t T = 1; T <= 6; ++T)
    for (std::size_t V = 2; V <= 4; ++V)
      for (int draw = 0; draw < 2; ++draw) {
        const auto lp = nn::log_softmax_rows(random_leaf({T, V}, rng, -2.0, 2.0));
        // every target over the non-blank labels 1..V-1 of length 0..3
        for (std::size_t L = 0; L <= 3; ++L) {
          std::size_t combos = 1;
          for (std::size_t i = 0; i < L; ++i) combos *= V - 1;
          for (std::size_t code = 0; code < combos; ++code) {
            std::vector<int> target(L);
            std::size_t c = code;
            for (auto& t : target) {
              t = static_cast<int>(1 + c % (V - 1));
              c /= V - 1;
            }
            const double expect = unist::testing::ctc_brute_force(lp.data(), T, V, target, 0);
            const double got = loss::ctc_loss(lp, target, 0).item();
            ++cases;
            if (std::isinf(expect) || std::isinf(got)) {
              ++inf_cases;
              agree = agree && std::isinf(expect) && std::isinf(got);
            } else {
              worst = std::max(worst, std::abs(got - expect));
            }
          }
        }
      }
  std::vector<double> half(6, std::log(0.5));
  const std::vector<int> a{1};
  const double three = loss::ctc_loss(nn::Tensor::matrix(3, 2, half), a, 0).item();
  const double three_err = std::abs(three + std::log(0.75));

  Outcome o;
  o.pass = agree && worst < 1e-9 && three_err < 1e-9 && seconds_since(t0) < 60.0;
  o.detail = std::to_string(cases) + " cases (" + std::to_string(inf_cases) + " infeasible, all agree: " +
             (agree ? "yes" : "no") + "), max |diff| " + fmt("%.2e", worst) + " (< 1e-9); 3-frame case " +
             fmt("%.6f", three) + " vs -ln 0.75; " + fmt("%.1f s", seconds_since(t0));
  return o;
}

// ---- 3: frontend shape ----------------------------------------------------

Outcome shape_law() {
  const auto cfg = unist::model::ModelConfig::toy();
  const unist::model::UnifiedModel model(cfg, 41);
  nn::NoGradGuard no_grad;
  std::size_t bad = 0, checked = 0;
  for (std::size_t T = 8; T <= 512; ++T) {
    const std::size_t expect = ((((T + 1) / 2) + 1) / 2 + 1) / 2;
    const unist::audio::FeatureMatrix feats(T, 40, 0.25);
    const auto rows = model.frontend(feats).rows();
    if (rows != expect || cfg.frontend_length(T) != expect) ++bad;
    ++checked;
  }
  return {bad == 0, std::to_string(checked) + " lengths T=8..512 through the toy frontend, " +
                        std::to_string(bad) + " mismatches"};
}

// ---- 4: schedule ----------------------------------------------------------

Outcome schedule_law() {
  std::size_t bad = 0, n = 0;
  for (double lr : {2e-3, 1e-3, 8e-4, 5e-4, 3e-4})
    for (std::size_t w : {2000, 6000, 10000}) {
      ++n;
      if (train::lr_inverse_sqrt(w, lr, w) != lr) ++bad;
      if (train::lr_inverse_sqrt(4 * w, lr, w) != lr / 2) ++bad;
    }
  return {bad == 0, std::to_string(n) + " (base_lr, warmup) grid points, " + std::to_string(bad) +
                        " inexact values at step=warmup or 4*warmup"};
}

// ---- 5: augmentation ------------------------------------------------------

Outcome augmentation_laws() {
  Rng rng(51);
  std::vector<std::string> failures;
  const auto feats = [&](std::size_t T, std::size_t F) {
    unist::audio::FeatureMatrix m(T, F);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) m(t, f) = rng.uniform_real(0.5, 1.5);
    return m;
  };

  const auto x = feats(57, 12);
  const augment::TimeStretchParams unit{0, 1.0, 1.0};
  if (!(augment::time_stretch(x, unit, rng) == x) || !(augment::stretch_by_factor(x, 1.0) == x))
    failures.push_back("s=1 not identity");

  std::size_t mono_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto T = static_cast<std::size_t>(rng.uniform_int(1, 600));
    const double s = rng.uniform_real(0.8, 1.25);
    const auto idx = augment::stretch_indices(T, s);
    const auto expect_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(T / s)));
    bool ok = idx.size() == expect_len && idx.front() == 0;
    for (std::size_t i = 0; i < idx.size() && ok; ++i) {
      ok = idx[i] < T && (i == 0 || idx[i] >= idx[i - 1]);
    }
    if (!ok) ++mono_bad;
  }
  if (mono_bad) failures.push_back(std::to_string(mono_bad) + " non-monotone index sets");

  const augment::SpecAugmentParams none{40, 4, 0, 0};
  const augment::SpecAugmentParams zero_width{0, 0, 2, 1};
  if (!(augment::spec_augment(x, none, rng) == x) || !(augment::spec_augment(x, zero_width, rng) == x))
    failures.push_back("zero masks not identity");

  std::size_t band_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto T = static_cast<std::size_t>(rng.uniform_int(1, 120));
    const auto F = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const auto in = feats(T, F);
    const augment::SpecAugmentParams p{static_cast<int>(rng.uniform_int(0, 50)),
                                       static_cast<int>(rng.uniform_int(0, 8)),
                                       static_cast<int>(rng.uniform_int(0, 3)),
                                       static_cast<int>(rng.uniform_int(0, 3))};
    augment::MaskTrace trace;
    const auto out = augment::spec_augment(in, p, rng, &trace);
    bool ok = trace.time.size() == static_cast<std::size_t>(p.time_masks) &&
              trace.freq.size() == static_cast<std::size_t>(p.freq_masks);
    for (const auto& b : trace.time)
      ok = ok && b.width <= std::min<std::size_t>(static_cast<std::size_t>(p.time_mask_max), T) && b.start + b.width <= T;
    for (const auto& b : trace.freq)
      ok = ok && b.width <= std::min<std::size_t>(static_cast<std::size_t>(p.freq_mask_max), F) && b.start + b.width <= F;
    for (std::size_t t = 0; t < T && ok; ++t)
      for (std::size_t f = 0; f < F && ok; ++f) {
        bool masked = false;
        for (const auto& b : trace.time) masked = masked || (t >= b.start && t < b.start + b.width);
        for (const auto& b : trace.freq) masked = masked || (f >= b.start && f < b.start + b.width);
        ok = masked ? out(t, f) == 0.0 : out(t, f) == in(t, f);
      }
    if (!ok) ++band_bad;
  }
  if (band_bad) failures.push_back(std::to_string(band_bad) + " band mismatches");

  std::string detail = "s=1 identity, 1000 random (T, s) index sets, zero-mask identity, 200 traced band layouts";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

// ---- 6: decoder -----------------------------------------------------------

Outcome decoder_laws() {
  std::size_t greedy_bad = 0, exhaustive_bad = 0, exhaustive_n = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t V = 3 + seed % 10;
    const unist::testing::FixtureScorer m(seed, V, 1.0 + static_cast<double>(seed % 4));
    const std::vector<const decode::StepScorer*> ms{&m};
    const std::size_t max_len = 2 + seed % 6;
    const auto b = decode::beam_search(ms, {1, max_len, 0, 1.0}, 0, 1);
    const auto g = unist::testing::greedy(m, max_len, 0, 1);
    if (b.ids != g.ids || b.score != g.score) ++greedy_bad;
  }

  auto exhaustive = [&](const decode::StepScorer& m, std::size_t V, std::size_t max_len, int bos, int eos) {
    const std::vector<const decode::StepScorer*> ms{&m};
    const auto h = decode::beam_search(ms, {static_cast<int>(V * max_len), max_len, 0, 1.0}, bos, eos);
    const double best = unist::testing::exhaustive_best(m, max_len, 1.0, bos, eos);
    ++exhaustive_n;
    if (std::abs(h.normalized(1.0) - best) > 1e-12) ++exhaustive_bad;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t V = 4 + seed % 9;  // up to 12
    const std::size_t max_len = V > 9 ? 4 : 5;
    exhaustive(unist::testing::FixtureScorer(500 + seed, V, 3.0), V, max_len, 0, 1);
  }
  // Small real models: vocab 12 of which 7 tokens are decodable.
  auto cfg = unist::model::ModelConfig::toy();
  cfg.vocab_size = 12;
  cfg.d_model = 16;
  cfg.ffn = 32;
  std::vector<unist::model::UnifiedModel> models;
  for (std::uint64_t seed = 0; seed < 3; ++seed) models.emplace_back(cfg, 600 + seed);
  const std::vector<int> src{5, 7, 9, unist::text::kEos};
  for (const auto& model : models) {
    const decode::ModelScorer scorer(model, model.encode_text(src, {"es"}), {"en"});
    exhaustive(scorer, 12, 5, unist::text::kBos, unist::text::kEos);
  }

  // k copies of one model
  double ens_diff = 0.0;
  bool same_output = true;
  const decode::ModelScorer one(models[0], models[0].encode_text(src, {"es"}), {"en"});
  for (std::size_t k : {2, 3, 5}) {
    const std::vector<const decode::StepScorer*> single{&one};
    const std::vector<const decode::StepScorer*> copies(k, &one);
    for (const std::vector<int>& prefix : {std::vector<int>{2}, std::vector<int>{2, 6, 8}}) {
      const auto a = decode::ensemble_log_probs(single, prefix);
      const auto b = decode::ensemble_log_probs(copies, prefix);
      for (std::size_t v = 0; v < a.size(); ++v)
        if (std::isfinite(a[v])) ens_diff = std::max(ens_diff, std::abs(std::exp(a[v]) - std::exp(b[v])));
        else same_output = same_output && !std::isfinite(b[v]);
    }
    const auto h1 = decode::beam_search(single, {5, 6, 0, 1.0});
    const auto hk = decode::beam_search(copies, {5, 6, 0, 1.0});
    same_output = same_output && h1.ids == hk.ids;
  }

  Outcome o;
  o.pass = greedy_bad == 0 && exhaustive_bad == 0 && ens_diff < 1e-9 && same_output;
  o.detail = "beam=1 vs greedy: " + std::to_string(greedy_bad) + "/100 differ; beam V*max_len vs exhaustive: " +
             std::to_string(exhaustive_bad) + "/" + std::to_string(exhaustive_n) +
             " differ; k-copy ensemble max |dp| " + fmt("%.1e", ens_diff) + ", same hypotheses: " +
             (same_output ? "yes" : "no");
  return o;
}

// ---- 7: metrics -----------------------------------------------------------

Outcome metric_oracles() {
  using Lines = std::vector<std::string>;
  const Lines refs{"the cat sat on the mat", "one two three four five"};
  const double same = metrics::bleu(refs, refs);
  const double bp = metrics::bleu(Lines{"a b c d"}, Lines{"a b c d e"});
  const double empty = metrics::bleu(Lines{"", ""}, refs);

  Rng rng(71);
  const Lines alphabet{"a", "b", "c", "d"};
  std::size_t bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto draw = [&](std::int64_t lo) {
      Lines s(static_cast<std::size_t>(rng.uniform_int(lo, 6)));
      for (auto& w : s) w = alphabet[static_cast<std::size_t>(rng.uniform_int(0, 3))];
      return s;
    };
    const auto h = draw(0), r = draw(1);
    const auto dist = unist::testing::edit_distance_recursive(h, r);
    auto join = [](const Lines& s) {
      std::string out;
      for (const auto& w : s) out += (out.empty() ? "" : " ") + w;
      return out;
    };
    const double w = metrics::wer(Lines{join(h)}, Lines{join(r)});
    if (metrics::edit_distance(h, r) != dist || w != static_cast<double>(dist) / static_cast<double>(r.size())) ++bad;
  }
  Outcome o;
  o.pass = std::abs(same - 100.0) < 1e-9 && std::abs(bp - 77.88) < 0.01 && empty == 0.0 && bad == 0;
  o.detail = "identical corpus BLEU " + fmt("%.4f", same) + "; brevity case " + fmt("%.4f", bp) +
             " (77.88 +- 0.01); empty hypotheses " + fmt("%.1f", empty) + "; WER vs recursion " +
             std::to_string(bad) + "/500 differ";
  return o;
}

// ---- shared toy data ------------------------------------------------------

train::TrainConfig toy_config(const std::string& name) {
  return train::load_config(fs::path(UNIST_SOURCE_DIR) / "configs" / name);
}

// Writes the toy corpus and prepares it once per work directory.
fs::path prepared_toy_data(bool zero_shot, const train::TrainConfig& cfg) {
  const auto base = g_work / (zero_shot ? "zero_shot" : "toy");
  const auto data = base / "data";
  if (fs::exists(data / "vocab.txt")) return data;
  unist::toy::ToyCorpusOptions opts;
  opts.zero_shot = zero_shot;
  unist::toy::write_toy_corpus(base / "raw", opts);
  pipeline::prepare_data(base / "raw", data, cfg);
  return data;
}

struct TermRow {
  std::size_t phase;
  std::string task;
  double weight, task_loss, weighted;
};

std::vector<TermRow> read_terms(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<TermRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string step, phase, task, weight, task_loss, ce, ctc, kd, weighted;
    std::getline(ss, step, '\t');
    std::getline(ss, phase, '\t');
    std::getline(ss, task, '\t');
    std::getline(ss, weight, '\t');
    std::getline(ss, task_loss, '\t');
    std::getline(ss, ce, '\t');
    std::getline(ss, ctc, '\t');
    std::getline(ss, kd, '\t');
    std::getline(ss, weighted, '\t');
    rows.push_back({std::stoul(phase), task, std::stod(weight), std::stod(task_loss), std::stod(weighted)});
  }
  return rows;
}

// ---- 8: curriculum --------------------------------------------------------

Outcome curriculum_behavior() {
  const auto t0 = Clock::now();
  auto cfg = toy_config("toy.ini");
  cfg.data_dir = prepared_toy_data(false, cfg);
  cfg.output_dir = g_work / "toy" / "run";
  fs::remove_all(cfg.output_dir);

  const auto st_rows = pipeline::read_manifest(cfg.data_dir / "train_st.tsv").rows.size() +
                       pipeline::read_manifest(cfg.data_dir / "dev_st.tsv").rows.size();
  const auto samples = pipeline::load_training_samples(cfg.data_dir, cfg.model);
  bool kd_on = false;
  for (const auto& p : cfg.phases) kd_on = kd_on || p.kd;
  const auto result = train::train(cfg, samples);
  const double elapsed = seconds_since(t0);

  const double start = result.st_loss_at_finetune_start.value_or(NAN);
  const double end = result.st_loss_at_end.value_or(NAN);
  const double ratio = end / start;

  // Weighted decomposition in the phase-2 log lines.
  std::map<std::string, std::set<double>> weights;
  double decomposition = 0.0;
  for (const auto& r : read_terms(cfg.output_dir / "loss_terms.tsv")) {
    if (r.phase == 2) weights[r.task].insert(r.weight);
    decomposition = std::max(decomposition, std::abs(r.weighted - r.weight * r.task_loss) /
                                                std::max(1.0, std::abs(r.weighted)));
  }
  const bool weights_ok = weights["ASR"] == std::set<double>{0.5} && weights["NMT"] == std::set<double>{0.5} &&
                          weights["ST"] == std::set<double>{1.0};

  // KD with the teacher forced equal to the student: the final model's own
  // distribution on a training ST sample.
  const auto final_model = train::load_model(result.checkpoints.back());
  double kd_gap = 0.0;
  std::size_t kd_checked = 0;
  for (const auto& s : samples) {
    if (s.task != Task::ST || kd_checked == 5) continue;
    nn::NoGradGuard no_grad;
    const auto enc = final_model.encode_speech(*s.speech, s.src_lang).encoder;
    std::vector<int> prefix{unist::text::kBos}, targets(s.tgt_ids);
    prefix.insert(prefix.end(), s.tgt_ids.begin(), s.tgt_ids.end());
    targets.push_back(unist::text::kEos);
    const auto lp = final_model.decoder_log_probs(enc, prefix, s.tgt_lang);
    std::vector<double> probs(lp.data().begin(), lp.data().end());
    for (auto& p : probs) p = std::exp(p);
    const auto teacher = nn::Tensor::from(lp.shape(), probs);
    const double kd = loss::kd_loss(lp, teacher, targets, unist::text::kPad, cfg.kd).item();
    const double ce = loss::cross_entropy(lp, targets, unist::text::kPad).item();
    kd_gap = std::max(kd_gap, std::abs(kd - 0.3 * ce));
    ++kd_checked;
  }

  Outcome o;
  o.pass = result.completed && kd_on && st_rows >= 50 && elapsed < 1800.0 && ratio < 0.2 && weights_ok &&
           decomposition < 1e-6 && kd_checked == 5 && kd_gap < 1e-12;
  o.detail = std::to_string(st_rows) + " utterances, " + std::to_string(result.steps) + " steps with KD in " +
             fmt("%.0f s", elapsed) + "; phase-3 ST loss " + fmt("%.4f", start) + " -> " + fmt("%.4f", end) +
             " = " + fmt("%.1f%%", 100.0 * ratio) + " (< 20%); phase-2 weights ASR/NMT/ST " +
             (weights_ok ? "0.5/0.5/1.0" : "WRONG") + ", weighted = weight*loss within " +
             fmt("%.1e", decomposition) + "; teacher == student kd - 0.3*CE " + fmt("%.1e", kd_gap);
  return o;
}

// ---- 9: determinism -------------------------------------------------------

Outcome determinism() {
  auto cfg = toy_config("toy.ini");
  cfg.data_dir = prepared_toy_data(false, cfg);
  cfg.phases[0].steps = 30;
  cfg.phases[1].steps = 20;
  cfg.phases[2].steps = 30;
  cfg.log_interval = 1;
  const auto samples = pipeline::load_training_samples(cfg.data_dir, cfg.model);
  std::vector<train::TrainResult> runs;
  for (const char* name : {"det_a", "det_b"}) {
    cfg.output_dir = g_work / "toy" / name;
    fs::remove_all(cfg.output_dir);
    runs.push_back(train::train(cfg, samples));
  }
  bool same = runs[0].checkpoints.size() == runs[1].checkpoints.size() && !runs[0].checkpoints.empty();
  std::size_t compared = 0;
  for (std::size_t i = 0; same && i < runs[0].checkpoints.size(); ++i, ++compared)
    same = slurp(runs[0].checkpoints[i]) == slurp(runs[1].checkpoints[i]);
  for (const char* log : {"train_log.tsv", "loss_terms.tsv"}) {
    same = same && slurp(g_work / "toy" / "det_a" / log) == slurp(g_work / "toy" / "det_b" / log);
    ++compared;
  }
  return {same, "two 80-step runs, seed " + std::to_string(cfg.seed) + ": " + std::to_string(compared) +
                    " files (checkpoints + logs) " + (same ? "byte-identical" : "DIFFER")};
}

// ---- 10: zero-shot --------------------------------------------------------

Outcome zero_shot() {
  auto cfg = toy_config("toy_zero_shot.ini");
  cfg.data_dir = prepared_toy_data(true, cfg);
  cfg.output_dir = g_work / "zero_shot" / "run";
  fs::remove_all(cfg.output_dir);
  const auto st = pipeline::read_manifest(cfg.data_dir / "train_st.tsv").rows.size();
  std::set<Task> tasks;
  for (const auto& p : cfg.phases) tasks.insert(p.tasks.begin(), p.tasks.end());
  const auto samples = pipeline::load_training_samples(cfg.data_dir, cfg.model);
  const auto result = train::train(cfg, samples);

  pipeline::DecodeRequest req;
  req.checkpoints = {result.checkpoints.back()};
  req.manifest = cfg.data_dir / "dev_asr.tsv";
  req.vocab = cfg.data_dir / "vocab.txt";
  req.task = Task::ST;
  req.tgt_lang = "en";
  const auto rows = pipeline::read_manifest(req.manifest).rows.size();
  const auto out = pipeline::run_decode(req);
  std::size_t empty = 0;
  for (const auto& h : out.hypotheses)
    if (h.find_first_not_of(" \t") == std::string::npos) ++empty;

  Outcome o;
  o.pass = st == 0 && !tasks.count(Task::ST) && rows > 0 && out.hypotheses.size() == rows && empty == 0;
  o.detail = "trained on es ASR + es->en NMT only (" + std::to_string(st) + " ST rows, " +
             std::to_string(result.steps) + " steps); decoded " + std::to_string(out.hypotheses.size()) + "/" +
             std::to_string(rows) + " es utterances into en, " + std::to_string(empty) + " empty" +
             (out.hypotheses.empty() ? "" : "; e.g. \"" + out.hypotheses.front() + "\"");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  g_work = fs::current_path() / "acceptance_work";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only N[,N...]]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient oracle", gradient_oracle},     {"CTC oracle", ctc_oracle},
      {"frontend shape law", shape_law},         {"schedule law", schedule_law},
      {"augmentation laws", augmentation_laws}, {"decoder laws", decoder_laws},
      {"metric oracles", metric_oracles},       {"curriculum behavior", curriculum_behavior},
      {"determinism", determinism},             {"zero-shot routing", zero_shot},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
