#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "unist/error.hpp"
#include "unist/pipeline.hpp"
#include "unist/toydata.hpp"

namespace {

namespace fs = std::filesystem;
namespace pipeline = unist::pipeline;
namespace toy = unist::toy;

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("unist_pipeline_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    opts_.utterances_per_source = 5;
    opts_.text_pairs_per_source = 3;
    opts_.dev_per_source = 1;
    cfg_.model.vocab_size = 128;
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_;
  toy::ToyCorpusOptions opts_;
  unist::train::TrainConfig cfg_;
};

TEST_F(PipelineTest, PrepareSplitsTasksAndKeepsDevOut) {
  const auto summary = toy::write_toy_corpus(root_ / "raw", opts_);
  EXPECT_EQ(summary.utterances, 10u);
  const auto r = pipeline::prepare_data(root_ / "raw", root_ / "data", cfg_);
  EXPECT_EQ(r.st_train, 8u);
  EXPECT_EQ(r.st_dev, 2u);
  EXPECT_EQ(r.asr_dev, 2u);
  EXPECT_EQ(r.nmt_train, 6u);
  EXPECT_LE(r.vocab_size, 128u);

  const auto st = pipeline::read_manifest(root_ / "data" / "train_st.tsv");
  ASSERT_EQ(st.rows.size(), 8u);
  const auto dev = pipeline::read_manifest(root_ / "data" / "dev_st.tsv");
  for (const auto& d : dev.rows)
    for (const auto& t : st.rows) EXPECT_NE(d.id, t.id);

  unist::audio::FeatureConfig fc;
  for (const auto& row : st.rows) {
    const auto wav = unist::audio::read_wav(root_ / "raw" / row.src_lang / "wav" / (row.id + ".wav"));
    EXPECT_EQ(row.n_frames, unist::audio::frame_count(wav.samples.size(), fc.window_samples(), fc.hop_samples()));
    EXPECT_EQ(unist::audio::load_features(st.audio(row)).frames(), row.n_frames);
    EXPECT_EQ(row.tgt_text, toy::toy_translate(row.src_text, row.src_lang, row.tgt_lang));
  }

  const auto samples = pipeline::load_training_samples(root_ / "data", cfg_.model);
  EXPECT_EQ(samples.size(), 8u * 3u + 6u);
}

TEST_F(PipelineTest, UnregisteredTargetLanguageNamesTheRow) {
  toy::write_toy_corpus(root_ / "raw", opts_);
  {
    std::ofstream out(root_ / "raw" / "es" / "text.tsv", std::ios::app);
    out << "bad_row\txx\tuno dos\tone two\n";
  }
  try {
    pipeline::prepare_data(root_ / "raw", root_ / "data", cfg_);
    FAIL() << "expected a DataError";
  } catch (const unist::DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("bad_row"), std::string::npos) << what;
    EXPECT_NE(what.find("'xx'"), std::string::npos) << what;
    EXPECT_NE(what.find("text.tsv:"), std::string::npos) << what;
  }
}

TEST_F(PipelineTest, ManifestRejectsWrongHeader) {
  fs::create_directories(root_);
  {
    std::ofstream out(root_ / "m.tsv");
    out << "id\taudio\n";
  }
  EXPECT_THROW(pipeline::read_manifest(root_ / "m.tsv"), unist::DataError);
}

TEST_F(PipelineTest, CheckpointListingIsNumeric) {
  fs::create_directories(root_);
  for (const char* name : {"ckpt_10.bin", "ckpt_9.bin", "ckpt_100.bin", "optim_100.bin", "ckpt_x.bin"})
    std::ofstream(root_ / name) << "x";
  const auto listed = pipeline::list_checkpoints(root_);
  ASSERT_EQ(listed.size(), 3u);
  EXPECT_EQ(listed[0].filename(), "ckpt_9.bin");
  EXPECT_EQ(listed[2].filename(), "ckpt_100.bin");
}

}  // namespace
