#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../src/binary_io.hpp"
#include "eri/checkpoint.hpp"
#include "eri/hash.hpp"
#include "test_util.hpp"

using namespace eri;
namespace fs = std::filesystem;

namespace {

const std::string kSmallModel =
    " --stage-channels 4,4,8,8 --frame-dims 3,16,16 --attention-heads 1 --attention-reduction 2 --lstm-hidden 8";

struct Result {
  int code;
  std::string output;
};

Result run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string(ERI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), io::read_file(log.string())};
}

std::string file(const fs::path& p) { return io::read_file(p.string()); }

fs::path synth_small(const fs::path& dir, int n_videos = 10) {
  const fs::path data = dir / "data";
  auto r = run("synth --data-dir " + data.string() + " --n-videos " + std::to_string(n_videos) +
                   " --frame-dims 3,16,16",
               dir);
  EXPECT_EQ(r.code, 0) << r.output;
  return data;
}

std::vector<std::string> report_rows(const fs::path& p) {
  std::istringstream in(file(p));
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

}  // namespace

TEST(Cli, SynthIsDeterministicAndRecordsFrameDims) {
  auto dir = test::scratch_dir("cli_synth");
  for (const char* name : {"a", "b"}) {
    auto r = run(std::string("synth --n-videos 6 --seed 7 --data-dir ") + (dir / name).string(), dir);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  EXPECT_EQ(sha256_hex(file(dir / "a" / "manifest.csv")), sha256_hex(file(dir / "b" / "manifest.csv")));
  EXPECT_EQ(file(dir / "a" / "frames" / "vid_0003.ftz"), file(dir / "b" / "frames" / "vid_0003.ftz"));
  EXPECT_NE(file(dir / "a" / "synth_meta.txt").find("frame_dims=3,32,32"), std::string::npos);
}

TEST(Cli, SynthRejectsSingleVideo) {
  auto dir = test::scratch_dir("cli_synth_bad");
  auto r = run("synth --n-videos 1 --data-dir " + (dir / "d").string(), dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("n_videos"), std::string::npos) << r.output;
}

TEST(Cli, TrainWritesReportAndCheckpointsReproducibly) {
  auto dir = test::scratch_dir("cli_train");
  auto data = synth_small(dir);
  const std::string args = "train --data-dir " + data.string() + " --out-dir " + (dir / "run").string() +
                           " --epochs 3 --batch-size 4" + kSmallModel;
  const std::vector<std::string> outputs{"train_report.csv", "best.ckpt", "final.ckpt"};
  auto r = run(args, dir);
  ASSERT_EQ(r.code, 0) << r.output;
  std::vector<std::string> first;
  for (const auto& f : outputs) first.push_back(file(dir / "run" / f));
  fs::remove_all(dir / "run");
  r = run(args, dir);
  ASSERT_EQ(r.code, 0) << r.output;
  for (std::size_t i = 0; i < outputs.size(); ++i) EXPECT_EQ(file(dir / "run" / outputs[i]), first[i]) << outputs[i];

  const std::string report = file(dir / "run" / "train_report.csv");
  EXPECT_NE(report.find("# manifest_sha256=" + sha256_hex(file(data / "manifest.csv"))), std::string::npos);
  EXPECT_NE(report.find("# lstm_hidden=8"), std::string::npos);
  auto rows = report_rows(dir / "run" / "train_report.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "epoch,steps,train_loss,train_mean_pcc,val_mean_pcc");
  EXPECT_EQ(rows[1].substr(0, 4), "1,2,");
}

TEST(Cli, ZeroLearningRateKeepsInitialization) {
  auto dir = test::scratch_dir("cli_lr0");
  auto data = synth_small(dir);
  auto r = run("train --lr 0 --steps 3 --batch-size 4 --data-dir " + data.string() + " --out-dir " + (dir / "run").string() +
                   kSmallModel,
               dir);
  ASSERT_EQ(r.code, 0) << r.output;
  ModelSet trained = checkpoint_load(dir / "run" / "final.ckpt");
  ModelSet fresh = make_models(trained.config);
  auto p = trained.parameters(), q = fresh.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].tensor.data(), q[i].tensor.data()) << p[i].name;
}

TEST(Cli, LossKindChangesFirstStepLoss) {
  auto dir = test::scratch_dir("cli_loss");
  auto data = synth_small(dir);
  std::vector<std::string> first;
  for (const char* loss : {"pcc", "ccc"}) {
    const fs::path out = dir / loss;
    auto r = run(std::string("train --steps 1 --batch-size 8 --loss ") + loss + " --data-dir " + data.string() +
                     " --out-dir " + out.string() + kSmallModel,
                 dir);
    ASSERT_EQ(r.code, 0) << r.output;
    auto rows = report_rows(out / "train_report.csv");
    std::istringstream cells(rows[1]);
    std::string cell;
    for (int i = 0; i < 3; ++i) std::getline(cells, cell, ',');
    first.push_back(cell);
  }
  EXPECT_NE(first[0], first[1]);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  auto dir = test::scratch_dir("cli_config");
  auto data = synth_small(dir);
  io::write_file((dir / "run.cfg").string(), "data_dir=" + data.string() + "\nout_dir=" + (dir / "run").string() +
                                                   "\nsteps=2\nbatch_size=4\nstage_channels=4,4,8,8\nframe_dims=3,16,16\n"
                                                   "attention_heads=1\nattention_reduction=2\nlstm_hidden=5\n");
  auto r = run("train --config " + (dir / "run.cfg").string() + " --lstm-hidden 7", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(checkpoint_load(dir / "run" / "final.ckpt").config.lstm_hidden, 7);
  EXPECT_NE(file(dir / "run" / "train_report.csv").find("# steps=2"), std::string::npos);
}

TEST(Cli, TrainRejectsBatchOfOne) {
  auto dir = test::scratch_dir("cli_bs1");
  auto data = synth_small(dir);
  auto r = run("train --batch-size 1 --data-dir " + data.string() + " --out-dir " + (dir / "run").string(), dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("batch_size"), std::string::npos) << r.output;
}

TEST(Cli, EvalReportsCategoriesInFixedOrder) {
  auto dir = test::scratch_dir("cli_eval");
  auto data = synth_small(dir);
  ASSERT_EQ(run("train --steps 4 --batch-size 4 --data-dir " + data.string() + " --out-dir " + (dir / "run").string() +
                    kSmallModel,
                dir)
                .code,
            0);
  const fs::path report = dir / "eval.csv";
  auto r = run("eval --split train --checkpoint " + (dir / "run" / "best.ckpt").string() + " --data-dir " + data.string() +
                   " --report " + report.string(),
               dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("mean PCC"), std::string::npos);
  auto rows = report_rows(report);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "split,n_samples,adoration,amusement,anxiety,disgust,empathic_pain,fear,surprise,mean_pcc,degenerate");
  EXPECT_EQ(rows[1].substr(0, 8), "train,8,");
  EXPECT_NE(file(report).find("# manifest_sha256="), std::string::npos);
}

TEST(Cli, EvalOfPredictionsEqualToTargetsScoresOne) {
  auto dir = test::scratch_dir("cli_eval_identity");
  auto data = synth_small(dir);
  Manifest m = read_manifest(data / "manifest.csv");
  std::ostringstream preds;
  preds.precision(17);
  preds << "video_id,adoration,amusement,anxiety,disgust,empathic_pain,fear,surprise\n";
  for (const auto& row : m.rows) {
    if (row.split != Split::Train) continue;
    preds << row.video_id;
    for (double v : row.labels) preds << ',' << v;
    preds << '\n';
  }
  io::write_file((dir / "preds.csv").string(), preds.str());
  auto r = run("eval --split train --predictions " + (dir / "preds.csv").string() + " --data-dir " + data.string() +
                   " --out-dir " + dir.string(),
               dir);
  ASSERT_EQ(r.code, 0) << r.output;
  auto rows = report_rows(dir / "eval_train.csv");
  std::istringstream cells(rows[1]);
  std::string cell;
  std::getline(cells, cell, ',');
  std::getline(cells, cell, ',');
  for (Index c = 0; c <= kCategories; ++c) {
    ASSERT_TRUE(std::getline(cells, cell, ','));
    EXPECT_NEAR(std::stod(cell), 1.0, 1e-12) << rows[1];
  }
}

TEST(Cli, EvalFailsOnCorruptCheckpointAndEmptySplit) {
  auto dir = test::scratch_dir("cli_eval_errors");
  auto data = synth_small(dir);
  ASSERT_EQ(run("train --steps 2 --batch-size 4 --data-dir " + data.string() + " --out-dir " + (dir / "run").string() +
                    kSmallModel,
                dir)
                .code,
            0);
  std::string bytes = file(dir / "run" / "final.ckpt");
  bytes[bytes.size() / 2] ^= 0x40;
  io::write_file((dir / "bad.ckpt").string(), bytes);
  auto bad = run("eval --checkpoint " + (dir / "bad.ckpt").string() + " --data-dir " + data.string(), dir);
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.output.find("CRC"), std::string::npos) << bad.output;
  auto empty = run("eval --split test --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data-dir " + data.string(),
                   dir);
  EXPECT_NE(empty.code, 0);
  EXPECT_NE(empty.output.find("no rows"), std::string::npos) << empty.output;
}

TEST(Cli, GradcheckScopes) {
  auto dir = test::scratch_dir("cli_gradcheck");
  auto ops = run("gradcheck ops --seed 3", dir);
  EXPECT_EQ(ops.code, 0) << ops.output;
  EXPECT_EQ(run("gradcheck ops --seed 3", dir).output, ops.output);
  EXPECT_NE(ops.output.find("lstm_3_steps"), std::string::npos);

  auto frozen = run("gradcheck model" + kSmallModel, dir);
  EXPECT_EQ(frozen.code, 0) << frozen.output;
  EXPECT_EQ(frozen.output.find("mtl_dan"), std::string::npos);
  EXPECT_NE(frozen.output.find("eri_head.fc.weight"), std::string::npos);

  auto unfrozen = run("gradcheck model --freeze-extractor false" + kSmallModel, dir);
  EXPECT_EQ(unfrozen.code, 0) << unfrozen.output;
  EXPECT_NE(unfrozen.output.find("mtl_dan.backbone.stem.weight"), std::string::npos);

  EXPECT_NE(run("gradcheck nonsense", dir).code, 0);
}
