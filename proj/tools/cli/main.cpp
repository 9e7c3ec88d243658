#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "unist/error.hpp"
#include "unist/pipeline.hpp"

namespace fs = std::filesystem;
using namespace unist;

namespace {

// Failure lines look like "unist: error[<kind>]: <message>" and never span lines.
[[nodiscard]] int fail(const std::string& kind, std::string message, int code) {
  for (auto& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "unist: error[" << kind << "]: " << message << '\n';
  return code;
}

void print_report(const metrics::EvalReport& report, const std::optional<fs::path>& tsv) {
  std::cout << report.summary_json() << '\n';
  if (tsv) {
    std::ofstream out(*tsv, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tsv->string());
    out << report.to_tsv();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified speech translation, recognition and text translation toolkit", "unist"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed = s; seed_given = true; },
        "Seed for every random draw (overrides the config)");
  };

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Features, manifests and subword vocabulary from a raw corpus");
  fs::path raw_dir, data_out;
  std::optional<fs::path> prep_config;
  prep->add_option("--raw", raw_dir, "Raw corpus directory")->required();
  prep->add_option("--out", data_out, "Output data directory")->required();
  prep->add_option("--config", prep_config, "Training config; its [model] section sets languages, n_mels and vocab_size");
  add_seed(prep);

  // train
  auto* trn = app.add_subcommand("train", "Run the three-phase curriculum");
  pipeline::TrainRequest train_req;
  std::optional<std::size_t> stop_after;
  trn->add_option("--config", train_req.config, "Config file")->required();
  trn->add_option("--output-dir", train_req.output_dir, "Override train.output_dir");
  trn->add_flag("--resume", train_req.options.resume, "Continue from the last saved checkpoint");
  trn->add_option("--stop-after-step", stop_after, "Exit after this global step without saving");
  trn->add_flag("-v,--verbose", train_req.options.verbose, "Print each logged step");
  add_seed(trn);

  // decode
  auto* dec = app.add_subcommand("decode", "Beam-search decode a manifest and score it");
  pipeline::DecodeRequest dec_req;
  std::string dec_task = "st";
  fs::path dec_output;
  std::optional<fs::path> dec_report;
  std::optional<std::string> dec_tgt;
  dec->add_option("--checkpoint", dec_req.checkpoints, "Checkpoint; give 2 or 3 for an ensemble")
      ->required()
      ->expected(1, 3);
  dec->add_option("--manifest", dec_req.manifest, "Manifest to decode")->required();
  dec->add_option("--task", dec_task, "st, asr or nmt")->capture_default_str();
  dec->add_option("--tgt-lang", dec_tgt, "Target language (default: the manifest's)");
  dec->add_option("--vocab", dec_req.vocab, "Vocabulary (default: vocab.txt next to the manifest)");
  dec->add_option("--beam", dec_req.decode.beam, "Beam size")->capture_default_str();
  dec->add_option("--length-penalty", dec_req.decode.length_penalty, "Score / length^penalty")
      ->capture_default_str();
  dec->add_option("--max-len", dec_req.decode.max_len, "Maximum output tokens (0: from input length)")
      ->capture_default_str();
  dec->add_option("--min-len", dec_req.decode.min_len, "Tokens before end-of-sentence is allowed")
      ->capture_default_str();
  dec->add_option("--output", dec_output, "Hypotheses file, one line per manifest row")->required();
  dec->add_flag("--scores", dec_req.with_scores, "Append a tab and the normalized score");
  dec->add_option("--report", dec_report, "Per-sample TSV report");
  add_seed(dec);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a hypotheses file against a manifest");
  fs::path ev_hyps, ev_manifest;
  std::string ev_task = "st";
  std::optional<fs::path> ev_report;
  ev->add_option("--hyps", ev_hyps, "Hypotheses file")->required();
  ev->add_option("--manifest", ev_manifest, "Reference manifest")->required();
  ev->add_option("--task", ev_task, "st or nmt (BLEU), asr (WER)")->capture_default_str();
  ev->add_option("--report", ev_report, "Per-sample TSV report");
  add_seed(ev);

  // average-checkpoints
  auto* avg = app.add_subcommand("average-checkpoints", "Parameter-wise mean of saved checkpoints");
  std::optional<fs::path> avg_dir;
  std::vector<fs::path> avg_inputs;
  std::size_t avg_last = 10;
  fs::path avg_output;
  auto* dir_opt = avg->add_option("--dir", avg_dir, "Training output directory");
  avg->add_option("--last", avg_last, "Average the last k checkpoints of --dir")->capture_default_str();
  avg->add_option("--inputs", avg_inputs, "Explicit checkpoint list")->excludes(dir_opt);
  avg->add_option("--output", avg_output, "Averaged checkpoint")->required();
  add_seed(avg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*prep) {
      auto cfg = prep_config ? train::load_config(*prep_config) : train::TrainConfig{};
      if (seed_given) cfg.seed = seed;
      const auto r = pipeline::prepare_data(raw_dir, data_out, cfg);
      std::cout << "train st=" << r.st_train << " asr=" << r.asr_train << " nmt=" << r.nmt_train
                << " dev st=" << r.st_dev << " asr=" << r.asr_dev << " nmt=" << r.nmt_dev
                << " vocab=" << r.vocab_size << '\n';
    } else if (*trn) {
      if (seed_given) train_req.seed = seed;
      train_req.options.stop_after_step = stop_after;
      const auto r = pipeline::run_train(train_req);
      std::cout << "steps=" << r.steps << (r.completed ? " completed" : " stopped")
                << " checkpoints=" << r.checkpoints.size()
                << " infeasible_ctc=" << r.counters.infeasible_ctc
                << " nonfinite_grad_samples=" << r.counters.nonfinite_grad_samples
                << " skipped_time_stretch=" << r.counters.skipped_time_stretch << '\n';
    } else if (*dec) {
      dec_req.task = parse_task(dec_task);
      dec_req.tgt_lang = dec_tgt;
      dec_req.output = dec_output;
      const auto r = pipeline::run_decode(dec_req);
      if (r.report) print_report(*r.report, dec_report);
      else std::cout << "{\"metric\":null,\"samples\":" << r.hypotheses.size() << "}\n";
    } else if (*ev) {
      print_report(pipeline::evaluate_file(ev_hyps, ev_manifest, parse_task(ev_task)), ev_report);
    } else if (*avg) {
      if (avg_dir) {
        const auto used = pipeline::average_last(*avg_dir, avg_last, avg_output);
        std::cout << "averaged " << used.size() << " checkpoints into " << avg_output.string() << '\n';
      } else {
        if (avg_inputs.empty()) return fail("usage", "give --dir or --inputs", 2);
        pipeline::average_files(avg_inputs, avg_output);
        std::cout << "averaged " << avg_inputs.size() << " checkpoints into " << avg_output.string() << '\n';
      }
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const DataError& e) {
    return fail("data", e.what(), 2);
  } catch (const TrainingError& e) {
    return fail("training", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
