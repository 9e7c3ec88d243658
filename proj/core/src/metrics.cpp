#include "unist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "unist/text.hpp"

namespace unist::metrics {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kZeroMatch = 1e-16;

struct BleuStats {
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::size_t matches[kMaxOrder] = {};
  std::size_t totals[kMaxOrder] = {};

  void add(const BleuStats& o) {
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    for (int n = 0; n < kMaxOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
  }

  double score() const {
    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
      const double num = matches[n] > 0 ? static_cast<double>(matches[n]) : kZeroMatch;
      const double den = static_cast<double>(std::max<std::size_t>(totals[n], 1));
      log_sum += std::log(num / den);
    }
    const double bp = std::exp(std::min(
        0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
    return 100.0 * bp * std::exp(log_sum / kMaxOrder);
  }
};

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams count_ngrams(const std::vector<std::string>& toks, int n) {
  Ngrams out;
  if (toks.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return out;
}

BleuStats sentence_stats(const std::string& hyp, const std::string& ref) {
  const auto h = text::split_words(hyp), r = text::split_words(ref);
  BleuStats s;
  s.hyp_len = h.size();
  s.ref_len = r.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto hc = count_ngrams(h, n), rc = count_ngrams(r, n);
    for (const auto& [gram, c] : hc) {
      auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(c, it->second);
      s.totals[n - 1] += c;
    }
  }
  return s;
}

void check_pairs(std::span<const std::string> hyps, std::span<const std::string> refs,
                 const char* metric) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument(std::string(metric) + ": " + std::to_string(hyps.size()) +
                                " hypotheses for " + std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw std::invalid_argument(std::string(metric) + ": empty corpus");
}

}  // namespace

double bleu(std::span<const std::string> hyps, std::span<const std::string> refs) {
  return bleu_report(hyps, refs).score;
}

EvalReport bleu_report(std::span<const std::string> hyps, std::span<const std::string> refs) {
  check_pairs(hyps, refs, "bleu");
  EvalReport report{"BLEU", 0.0, {}, hyps.size()};
  BleuStats corpus;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto s = sentence_stats(hyps[i], refs[i]);
    report.per_sample.push_back(s.score());
    corpus.add(s);
  }
  report.score = corpus.score();
  return report;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

EvalReport wer_report(std::span<const std::string> hyps, std::span<const std::string> refs) {
  check_pairs(hyps, refs, "wer");
  EvalReport report{"WER", 0.0, {}, hyps.size()};
  std::size_t errors = 0, words = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = text::split_words(hyps[i]), r = text::split_words(refs[i]);
    if (r.empty())
      throw std::invalid_argument("wer: reference " + std::to_string(i) + " is empty");
    const auto e = edit_distance(h, r);
    report.per_sample.push_back(static_cast<double>(e) / static_cast<double>(r.size()));
    errors += e;
    words += r.size();
  }
  report.score = static_cast<double>(errors) / static_cast<double>(words);
  return report;
}

double wer(std::span<const std::string> hyps, std::span<const std::string> refs) {
  return wer_report(hyps, refs).score;
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  for (std::size_t i = 0; i < per_sample.size(); ++i) os << i << '\t' << per_sample[i] << '\n';
  os << "corpus\t" << metric << '\t' << score << '\t' << samples << '\n';
  return os.str();
}

std::string EvalReport::summary_json() const {
  nlohmann::json j;
  j["metric"] = metric;
  j["score"] = score;
  j["samples"] = samples;
  return j.dump();
}

}  // namespace unist::metrics
