#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "unist/error.hpp"
#include "unist/training.hpp"

namespace unist::train {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

class LineParser {
 public:
  LineParser(std::size_t line, std::string key, std::string value)
      : line_(line), key_(std::move(key)), value_(std::move(value)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + key_ + ": " + what);
  }

  std::size_t size() const {
    std::size_t v = 0;
    const auto* end = value_.data() + value_.size();
    auto [p, ec] = std::from_chars(value_.data(), end, v);
    if (ec != std::errc() || p != end) fail("expected a non-negative integer, got '" + value_ + "'");
    return v;
  }

  int integer() const {
    int v = 0;
    const auto* end = value_.data() + value_.size();
    auto [p, ec] = std::from_chars(value_.data(), end, v);
    if (ec != std::errc() || p != end) fail("expected an integer, got '" + value_ + "'");
    return v;
  }

  double real() const {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value_, &used);
    } catch (const std::exception&) {
      fail("expected a number, got '" + value_ + "'");
    }
    if (used != value_.size()) fail("expected a number, got '" + value_ + "'");
    return v;
  }

  bool boolean() const {
    if (value_ == "true" || value_ == "1" || value_ == "yes" || value_ == "on") return true;
    if (value_ == "false" || value_ == "0" || value_ == "no" || value_ == "off") return false;
    fail("expected true or false, got '" + value_ + "'");
  }

  std::set<Task> tasks() const {
    std::set<Task> out;
    std::stringstream ss(value_);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.insert(parse_task(item));
      } catch (const std::exception&) {
        fail("unknown task '" + item + "'");
      }
    }
    return out;
  }

  const std::string& value() const { return value_; }

 private:
  std::size_t line_;
  std::string key_;
  std::string value_;
};

fs::path resolve(const std::string& value, const fs::path& base) {
  fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

TrainConfig parse_config(const std::string& contents, const fs::path& base_dir) {
  TrainConfig cfg;
  // Phases are collected by number; a phase left at zero steps is dropped.
  auto phases = default_phases();
  std::string section;
  std::istringstream in(contents);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "augment" &&
          section != "decode" && section != "phase1" && section != "phase2" && section != "phase3")
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" +
                          section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": '" + key +
                        "' is outside any section");
    const LineParser v(lineno, section + "." + key, value);

    if (section == "model") {
      if (!cfg.model.set(key, value)) v.fail("unknown key");
    } else if (section == "train") {
      if (key == "seed") cfg.seed = v.size();
      else if (key == "batch_size") cfg.batch_size = v.size();
      else if (key == "base_lr") cfg.base_lr = v.real();
      else if (key == "warmup") cfg.warmup = v.size();
      else if (key == "label_smoothing") cfg.label_smoothing = v.real();
      else if (key == "clip_norm") cfg.clip_norm = v.real();
      else if (key == "reset_lr_per_phase") cfg.reset_lr_per_phase = v.boolean();
      else if (key == "log_interval") cfg.log_interval = v.size();
      else if (key == "ctc_weight") cfg.ctc_weight = v.real();
      else if (key == "kd_weight") cfg.kd.kd_weight = v.real();
      else if (key == "data_dir") cfg.data_dir = resolve(value, base_dir);
      else if (key == "output_dir") cfg.output_dir = resolve(value, base_dir);
      else v.fail("unknown key");
    } else if (section == "augment") {
      if (key == "time_mask_max") cfg.spec_augment.time_mask_max = v.integer();
      else if (key == "freq_mask_max") cfg.spec_augment.freq_mask_max = v.integer();
      else if (key == "time_masks") cfg.spec_augment.time_masks = v.integer();
      else if (key == "freq_masks") cfg.spec_augment.freq_masks = v.integer();
      else if (key == "stretch_window") cfg.time_stretch.window = value == "inf" ? 0 : v.size();
      else if (key == "stretch_low") cfg.time_stretch.low = v.real();
      else if (key == "stretch_high") cfg.time_stretch.high = v.real();
      else v.fail("unknown key");
    } else if (section == "decode") {
      if (key == "beam") cfg.decode.beam = v.integer();
      else if (key == "length_penalty") cfg.decode.length_penalty = v.real();
      else if (key == "max_len") cfg.decode.max_len = v.size();
      else v.fail("unknown key");
    } else {
      auto& p = phases[static_cast<std::size_t>(section.back() - '1')];
      if (key == "steps") p.steps = v.size();
      else if (key == "tasks") p.tasks = v.tasks();
      else if (key == "asr_weight") p.weights.asr = v.real();
      else if (key == "nmt_weight") p.weights.nmt = v.real();
      else if (key == "st_weight") p.weights.st = v.real();
      else if (key == "spec_augment") p.spec_augment = v.boolean();
      else if (key == "time_stretch") p.time_stretch = v.boolean();
      else if (key == "kd") p.kd = v.boolean();
      else v.fail("unknown key");
    }
  }

  cfg.phases.clear();
  for (auto& p : phases) {
    p.weights.ctc_weight = cfg.ctc_weight;
    if (p.steps > 0) cfg.phases.push_back(std::move(p));
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

}  // namespace unist::train
