#include "unist/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "unist/error.hpp"

namespace unist {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::ASR: return "ASR";
    case Task::NMT: return "NMT";
    case Task::ST: return "ST";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  std::string up(name);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "ASR") return Task::ASR;
  if (up == "NMT") return Task::NMT;
  if (up == "ST") return Task::ST;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

}  // namespace unist

namespace unist::loss {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void check_targets(std::span<const int> targets, std::size_t rows, std::size_t vocab,
                   const char* op) {
  if (targets.size() != rows)
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw std::invalid_argument(std::string(op) + ": target id out of range");
}

struct CtcLattice {
  std::vector<int> labels;   // blank-interleaved, length 2U+1
  std::vector<double> alpha;  // T × S
  std::vector<double> beta;   // T × S
  double log_likelihood = kNegInf;
};

// alpha_t(s) and beta_t(s) both include the emission at frame t.
CtcLattice ctc_lattice(std::span<const double> lp, std::size_t T, std::size_t V,
                       std::span<const int> target, int blank, bool want_beta) {
  CtcLattice L;
  L.labels.push_back(blank);
  for (int t : target) {
    L.labels.push_back(t);
    L.labels.push_back(blank);
  }
  const auto S = L.labels.size();
  const auto emit = [&](std::size_t t, std::size_t s) {
    return lp[t * V + static_cast<std::size_t>(L.labels[s])];
  };
  const auto can_skip = [&](std::size_t s) {
    return s >= 2 && L.labels[s] != blank && L.labels[s] != L.labels[s - 2];
  };

  L.alpha.assign(T * S, kNegInf);
  L.alpha[0] = emit(0, 0);
  if (S > 1) L.alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = L.alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, L.alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, L.alpha[(t - 1) * S + s - 2]);
      L.alpha[t * S + s] = a == kNegInf ? kNegInf : a + emit(t, s);
    }
  }
  L.log_likelihood = L.alpha[(T - 1) * S + S - 1];
  if (S > 1) L.log_likelihood = log_add(L.log_likelihood, L.alpha[(T - 1) * S + S - 2]);

  if (!want_beta) return L;
  L.beta.assign(T * S, kNegInf);
  L.beta[(T - 1) * S + S - 1] = emit(T - 1, S - 1);
  if (S > 1) L.beta[(T - 1) * S + S - 2] = emit(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = L.beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, L.beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, L.beta[(t + 1) * S + s + 2]);
      L.beta[t * S + s] = b == kNegInf ? kNegInf : b + emit(t, s);
    }
  }
  return L;
}

}  // namespace

double LossWeights::of(Task task) const {
  switch (task) {
    case Task::ASR: return asr;
    case Task::NMT: return nmt;
    case Task::ST: return st;
  }
  return 0.0;
}

Tensor cross_entropy(const Tensor& log_probs, std::span<const int> targets, int pad_id,
                     double label_smoothing) {
  const auto L = log_probs.rows(), V = log_probs.cols();
  check_targets(targets, L, V, "cross_entropy");
  std::vector<int> tg(targets.begin(), targets.end());
  const auto count = static_cast<std::size_t>(
      std::count_if(tg.begin(), tg.end(), [pad_id](int t) { return t != pad_id; }));
  if (count == 0) throw std::invalid_argument("cross_entropy: every target is padding");

  const auto lp = log_probs.data();
  const double eps = label_smoothing;
  const double n = static_cast<double>(count);
  double total = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    if (tg[i] == pad_id) continue;
    const double* row = lp.data() + i * V;
    double nll = -row[tg[i]];
    if (eps > 0.0) {
      double mean_row = 0.0;
      for (std::size_t v = 0; v < V; ++v) mean_row += row[v];
      mean_row /= static_cast<double>(V);
      nll = (1.0 - eps) * nll - eps * mean_row;
    }
    total += nll;
  }
  const Tensor inputs[] = {log_probs};
  return nn::make_op({}, {total / n}, inputs,
                     [tg = std::move(tg), pad_id, eps, n, V](std::span<const double> g,
                                                            std::span<double* const> gi) {
                       const double scale = g[0] / n;
                       for (std::size_t i = 0; i < tg.size(); ++i) {
                         if (tg[i] == pad_id) continue;
                         double* row = gi[0] + i * V;
                         row[tg[i]] -= scale * (1.0 - eps);
                         if (eps > 0.0)
                           for (std::size_t v = 0; v < V; ++v)
                             row[v] -= scale * eps / static_cast<double>(V);
                       }
                     });
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

double ctc_neg_log_likelihood(std::span<const double> log_probs, std::size_t frames,
                              std::size_t vocab, std::span<const int> target, int blank_id) {
  if (std::find(target.begin(), target.end(), blank_id) != target.end())
    throw std::invalid_argument("ctc: target contains the blank id");
  if (frames == 0 || frames < ctc_min_frames(target))
    return std::numeric_limits<double>::infinity();
  return -ctc_lattice(log_probs, frames, vocab, target, blank_id, false).log_likelihood;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank_id) {
  const auto T = log_probs.rows(), V = log_probs.cols();
  if (std::find(target.begin(), target.end(), blank_id) != target.end())
    throw std::invalid_argument("ctc: target contains the blank id");
  for (int t : target)
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw std::invalid_argument("ctc: target id out of range");
  const Tensor inputs[] = {log_probs};
  if (T == 0 || T < ctc_min_frames(target)) {
    return nn::make_op({}, {std::numeric_limits<double>::infinity()}, inputs,
                       [](std::span<const double>, std::span<double* const>) {});
  }
  auto lattice = ctc_lattice(log_probs.data(), T, V, target, blank_id, nn::grad_enabled());
  const double ll = lattice.log_likelihood;
  if (ll == kNegInf) {
    return nn::make_op({}, {std::numeric_limits<double>::infinity()}, inputs,
                       [](std::span<const double>, std::span<double* const>) {});
  }
  return nn::make_op(
      {}, {-ll}, inputs,
      [lattice = std::move(lattice), log_probs, T, V, ll](std::span<const double> g,
                                                          std::span<double* const> gi) {
        // d(-ln P)/d lp_t(k) = -Σ_{s: l_s = k} α_t(s) β_t(s) / (P · y_t(k))
        const auto S = lattice.labels.size();
        const auto lp = log_probs.data();
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t s = 0; s < S; ++s) {
            const double ab = lattice.alpha[t * S + s] + lattice.beta[t * S + s];
            if (ab == kNegInf) continue;
            const auto k = static_cast<std::size_t>(lattice.labels[s]);
            gi[0][t * V + k] -= g[0] * std::exp(ab - lp[t * V + k] - ll);
          }
        }
      });
}

Tensor kd_loss(const Tensor& student_log_probs, const Tensor& teacher_probs,
               std::span<const int> targets, int pad_id, const KdConfig& cfg,
               double label_smoothing) {
  if (cfg.kd_weight < 0.0 || cfg.kd_weight > 1.0)
    throw std::invalid_argument("kd_loss: kd_weight must lie in [0, 1]");
  if (student_log_probs.shape() != teacher_probs.shape())
    throw std::invalid_argument("kd_loss: student and teacher shapes differ");
  const auto L = student_log_probs.rows(), V = student_log_probs.cols();
  check_targets(targets, L, V, "kd_loss");
  const auto ce = cross_entropy(student_log_probs, targets, pad_id, label_smoothing);
  if (cfg.kd_weight == 0.0) return ce;

  std::vector<int> tg(targets.begin(), targets.end());
  const auto count = static_cast<double>(
      std::count_if(tg.begin(), tg.end(), [pad_id](int t) { return t != pad_id; }));
  const auto sp = student_log_probs.data(), tp = teacher_probs.data();
  double kl = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    if (tg[i] == pad_id) continue;
    for (std::size_t v = 0; v < V; ++v) {
      const double p = tp[i * V + v];
      if (p > 0.0) kl += p * (std::log(p) - sp[i * V + v]);
    }
  }
  const Tensor inputs[] = {student_log_probs};
  const auto kl_term = nn::make_op(
      {}, {kl / count}, inputs,
      [teacher_probs, tg = std::move(tg), pad_id, count, V](std::span<const double> g,
                                                            std::span<double* const> gi) {
        const auto tp = teacher_probs.data();
        for (std::size_t i = 0; i < tg.size(); ++i) {
          if (tg[i] == pad_id) continue;
          for (std::size_t v = 0; v < V; ++v) gi[0][i * V + v] -= g[0] * tp[i * V + v] / count;
        }
      });
  return nn::add(nn::scale(kl_term, cfg.kd_weight), nn::scale(ce, 1.0 - cfg.kd_weight));
}

Tensor multitask_loss(const std::map<Task, TaskTerm>& per_task, const LossWeights& weights) {
  Tensor total;
  for (const auto& [task, term] : per_task) {
    auto t = term.loss;
    if (term.ctc) t = nn::add(t, nn::scale(*term.ctc, weights.ctc_weight));
    t = nn::scale(t, weights.of(task));
    total = total.defined() ? nn::add(total, t) : t;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace unist::loss
