#include <iostream>

#include "CLI11.hpp"

#include "unist/toydata.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic tone-sequence corpus", "unist-toydata"};
  std::filesystem::path out;
  unist::toy::ToyCorpusOptions opts;
  app.add_option("--out", out, "Raw corpus directory")->required();
  app.add_option("--utterances", opts.utterances_per_source, "Utterances per source language")
      ->capture_default_str();
  app.add_option("--text-pairs", opts.text_pairs_per_source, "Text pairs per source language")
      ->capture_default_str();
  app.add_option("--dev", opts.dev_per_source, "Held-out utterances per source language")
      ->capture_default_str();
  app.add_flag("--zero-shot", opts.zero_shot, "es speech/transcripts and es-en text only");
  app.add_option("--seed", opts.seed, "Corpus seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    std::filesystem::create_directories(out);
    const auto s = unist::toy::write_toy_corpus(out, opts);
    std::cout << "utterances=" << s.utterances << " translated=" << s.translated
              << " text_pairs=" << s.text_pairs << " dev=" << s.dev << '\n';
  } catch (const std::exception& e) {
    std::cerr << "unist-toydata: error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
