#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crl/train.hpp"

// End-to-end checks of the command-line binary. CRL_CLI_PATH is injected by
// the build so the tests always run the binary they were built with.

namespace fs = std::filesystem;

namespace {

std::string cli_path() { return CRL_CLI_PATH; }

struct RunResult {
  int exit_code = -1;
  std::string out;
};

/// Runs the CLI with the given arguments, capturing stdout+stderr.
RunResult run_cli(const std::string& args, const fs::path& cwd) {
  const fs::path log = cwd / "cmd_output.log";
  std::string cmd = "cd '" + cwd.string() + "' && '" + cli_path() + "' " + args + " > '" +
                    log.string() + "' 2>&1";
  int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "crl_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  EXPECT_TRUE(is.good()) << p.string();
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_tiny_config(const fs::path& p, const std::string& setting) {
  std::ofstream os(p);
  os << "# small smoke configuration\n"
     << "setting=" << setting << "\n"
     << "stage1_iterations=4\n"
     << "stage2_iterations=4\n"
     << "batch_size=2\n"
     << "enc1_channels=4\n"
     << "enc2_channels=6\n"
     << "feature_channels=8\n"
     << "aspp_rates=1,2\n"
     << "hidden_channels=4\n"
     << "seed=5\n";
}

/// Generates a small dataset under dir/ds and returns its path.
fs::path make_dataset(const fs::path& dir, int count = 6) {
  RunResult r = run_cli("gen-data --out ds --seed 7 --count " + std::to_string(count) +
                            " --size 16 --classes 4",
                        dir);
  EXPECT_EQ(r.exit_code, 0) << r.out;
  return dir / "ds";
}

bool file_nonempty(const fs::path& p) {
  return fs::exists(p) && fs::file_size(p) > 0;
}

/// Minimal PGM (P5, maxval 255) structural check; returns pixel count.
long check_pgm(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  EXPECT_TRUE(is.good()) << p.string();
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  EXPECT_EQ(magic, "P5") << p.string();
  EXPECT_GT(w, 0);
  EXPECT_GT(h, 0);
  EXPECT_EQ(maxval, 255);
  is.get();  // single whitespace byte before the raster
  std::vector<char> raster(static_cast<std::size_t>(w) * h);
  is.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  EXPECT_EQ(is.gcount(), static_cast<std::streamsize>(raster.size())) << p.string();
  is.get();
  EXPECT_TRUE(is.eof()) << p.string() << ": trailing bytes after the raster";
  return w * h;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

TEST(CliGenData, WritesDatasetWithManifestAndSidecarRunFile) {
  fs::path dir = fresh_dir("gendata");
  fs::path ds = make_dataset(dir);

  EXPECT_TRUE(file_nonempty(ds / "header.txt"));
  EXPECT_TRUE(file_nonempty(ds / "manifest.txt"));
  for (const char* suffix : {".rgb.crtf", ".hha.crtf", ".depth.crtf", ".labels.crtf"})
    EXPECT_TRUE(file_nonempty(ds / ("s000003" + std::string(suffix)))) << suffix;

  // manifest lists every sample id with its files
  std::vector<std::string> ids = lines_of(slurp(ds / "manifest.txt"));
  EXPECT_EQ(ids.size(), 6u);
  EXPECT_EQ(ids.front().rfind("s000000", 0), 0u) << ids.front();
  EXPECT_EQ(ids.back().rfind("s000005", 0), 0u) << ids.back();

  // run manifest sits next to the dataset, not inside it
  std::string manifest = slurp(dir / "ds.run.txt");
  EXPECT_EQ(manifest.rfind("command=", 0), 0u);
  EXPECT_NE(manifest.find("seed=7"), std::string::npos);
  EXPECT_NE(manifest.find("output.dataset=ds"), std::string::npos);
  EXPECT_NE(manifest.find("dataset_header_sha1="), std::string::npos);
  EXPECT_NE(manifest.find("started_utc="), std::string::npos);
  EXPECT_NE(manifest.find("finished_utc="), std::string::npos);
}

TEST(CliGenData, SameFlagsProduceByteIdenticalDatasets) {
  fs::path dir = fresh_dir("gendata_repeat");
  make_dataset(dir);
  RunResult r = run_cli("gen-data --out ds_again --seed 7 --count 6 --size 16 --classes 4",
                        dir);
  ASSERT_EQ(r.exit_code, 0) << r.out;

  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "ds")) {
    fs::path twin = dir / "ds_again" / e.path().filename();
    ASSERT_TRUE(fs::exists(twin)) << twin.string();
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path().filename().string();
    ++files;
  }
  EXPECT_EQ(files, 2 + 6 * 4);
}

TEST(CliGenData, RejectsBadArgumentsAsUsageErrors) {
  fs::path dir = fresh_dir("gendata_bad");
  EXPECT_EQ(run_cli("gen-data --out x --classes 1", dir).exit_code, 2);
  EXPECT_EQ(run_cli("gen-data --out x --count 0", dir).exit_code, 2);
  EXPECT_EQ(run_cli("gen-data --out x --size 4", dir).exit_code, 2);
  EXPECT_EQ(run_cli("gen-data", dir).exit_code, 2);       // --out is required
  EXPECT_EQ(run_cli("gen-dataa --out x", dir).exit_code, 2);  // unknown command
}

TEST(CliTrain, StageAllWritesCheckpointsLossCsvAndManifest) {
  fs::path dir = fresh_dir("train_all");
  fs::path ds = make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  RunResult r = run_cli("train --data ds --out run --config tiny.cfg", dir);
  ASSERT_EQ(r.exit_code, 0) << r.out;

  EXPECT_TRUE(file_nonempty(dir / "run" / "stage1.ckpt"));
  EXPECT_TRUE(file_nonempty(dir / "run" / "stage2.ckpt"));
  EXPECT_TRUE(file_nonempty(dir / "run" / "run.txt"));

  std::vector<crl::LossRow> rows = crl::read_loss_csv(dir / "run" / "loss.csv");
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows.front().stage, 1);
  EXPECT_EQ(rows.back().stage, 2);
  for (const crl::LossRow& row : rows) EXPECT_TRUE(std::isfinite(row.total));

  // stage-1 rows leave the joint-code columns empty, stage-2 rows fill them
  EXPECT_TRUE(std::isnan(rows.front().loss_rec));
  EXPECT_FALSE(std::isnan(rows.back().loss_rec));

  std::string manifest = slurp(dir / "run" / "run.txt");
  EXPECT_EQ(manifest.rfind("command=", 0), 0u);
  EXPECT_NE(manifest.find("input.data=ds"), std::string::npos);
  EXPECT_NE(manifest.find("config.setting=ss"), std::string::npos);
  EXPECT_NE(manifest.find("config.stage1_iterations=4"), std::string::npos);
  EXPECT_NE(manifest.find("dataset_header_sha1="), std::string::npos);
  ASSERT_TRUE(fs::exists(ds));
}

TEST(CliTrain, RepeatedRunsAreBitIdentical) {
  fs::path dir = fresh_dir("train_repeat");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  ASSERT_EQ(run_cli("train --data ds --out run_a --config tiny.cfg", dir).exit_code, 0);
  ASSERT_EQ(run_cli("train --data ds --out run_b --config tiny.cfg", dir).exit_code, 0);
  EXPECT_EQ(slurp(dir / "run_a" / "loss.csv"), slurp(dir / "run_b" / "loss.csv"));
  EXPECT_EQ(slurp(dir / "run_a" / "stage2.ckpt"), slurp(dir / "run_b" / "stage2.ckpt"));
}

TEST(CliTrain, FlagsOverrideConfigFile) {
  fs::path dir = fresh_dir("train_override");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  RunResult r =
      run_cli("train --data ds --out run --config tiny.cfg --setting ssd --seed 99 --stage 1",
              dir);
  ASSERT_EQ(r.exit_code, 0) << r.out;
  std::string manifest = slurp(dir / "run" / "run.txt");
  EXPECT_NE(manifest.find("config.setting=ssd"), std::string::npos);
  EXPECT_NE(manifest.find("seed=99"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "stage1.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "run" / "stage2.ckpt"));
}

TEST(CliTrain, StageTwoAloneNeedsAStageOneCheckpoint) {
  fs::path dir = fresh_dir("train_stage2");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  RunResult missing = run_cli("train --data ds --out empty_run --config tiny.cfg --stage 2",
                              dir);
  EXPECT_EQ(missing.exit_code, 1);
  EXPECT_NE(missing.out.find("stage1.ckpt"), std::string::npos);

  ASSERT_EQ(run_cli("train --data ds --out run --config tiny.cfg --stage 1", dir).exit_code,
            0);
  RunResult cont = run_cli("train --data ds --out run --config tiny.cfg --stage 2", dir);
  ASSERT_EQ(cont.exit_code, 0) << cont.out;
  EXPECT_TRUE(file_nonempty(dir / "run" / "stage2.ckpt"));
  std::vector<crl::LossRow> rows = crl::read_loss_csv(dir / "run" / "loss.csv");
  ASSERT_FALSE(rows.empty());
  for (const crl::LossRow& row : rows) EXPECT_EQ(row.stage, 2);
}

TEST(CliTrain, UsageAndRuntimeErrorsAreDistinct) {
  fs::path dir = fresh_dir("train_errors");
  EXPECT_EQ(run_cli("train --out run", dir).exit_code, 2);           // missing --data
  EXPECT_EQ(run_cli("train --data ds --out run --stage 3", dir).exit_code, 2);
  EXPECT_EQ(run_cli("train --data no_such_dir --out run", dir).exit_code, 1);
}

TEST(CliEval, SchemaIsStableAcrossSettingsAndViews) {
  fs::path dir = fresh_dir("eval");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  ASSERT_EQ(run_cli("train --data ds --out run --config tiny.cfg", dir).exit_code, 0);

  for (const std::string views : {"both", "rgb", "depth"}) {
    RunResult r = run_cli("eval --checkpoint run/stage2.ckpt --data ds --views " + views +
                              " --out eval_" + views + ".csv",
                          dir);
    ASSERT_EQ(r.exit_code, 0) << r.out;
    std::vector<std::string> lines = lines_of(slurp(dir / ("eval_" + views + ".csv")));
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0], crl::kEvalCsvHeader);
    EXPECT_EQ(lines[1].rfind("ss,2," + views + ",", 0), 0u) << lines[1];
    // segmentation-only run: the rmse cell is present but empty
    std::stringstream row(lines[1]);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 11u);
    EXPECT_TRUE(cells[5].empty()) << "rmse cell: " << cells[5];
    EXPECT_FALSE(cells[3].empty()) << "mean_iou cell";
    EXPECT_TRUE(file_nonempty(dir / ("eval_" + views + ".csv.run.txt")));
  }
}

TEST(CliEval, MissingInputsFailAtRuntime) {
  fs::path dir = fresh_dir("eval_errors");
  make_dataset(dir);
  EXPECT_EQ(run_cli("eval --checkpoint nope.ckpt --data ds --out e.csv", dir).exit_code, 1);
  EXPECT_EQ(run_cli("eval --checkpoint nope.ckpt --data ds --views sideways --out e.csv",
                    dir)
                .exit_code,
            2);
  EXPECT_EQ(run_cli("eval --data ds --out e.csv", dir).exit_code, 2);
}

TEST(CliInspect, BothViewsDumpDocumentedPgms) {
  fs::path dir = fresh_dir("inspect");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  ASSERT_EQ(run_cli("train --data ds --out run --config tiny.cfg", dir).exit_code, 0);
  RunResult r = run_cli("inspect --checkpoint run/stage2.ckpt --data ds --out insp", dir);
  ASSERT_EQ(r.exit_code, 0) << r.out;

  std::vector<std::string> index = lines_of(slurp(dir / "insp" / "index.txt"));
  EXPECT_GE(index.size(), 8u);
  int pgms = 0;
  for (const std::string& line : index) {
    std::string file = line.substr(0, line.find(' '));
    ASSERT_NE(file.rfind(".pgm"), std::string::npos) << line;
    EXPECT_GT(line.size(), file.size() + 2) << "missing description: " << line;
    check_pgm(dir / "insp" / file);
    ++pgms;
  }
  EXPECT_GE(pgms, 8);
  for (const char* name :
       {"input_rgb.pgm", "input_hha.pgm", "feat_rgb.pgm", "feat_depth.pgm",
        "hidden_joint.pgm", "hidden_rgb_only.pgm", "hidden_depth_only.pgm",
        "recon_rgb.pgm", "recon_depth.pgm", "pred_seg.pgm"})
    EXPECT_TRUE(fs::exists(dir / "insp" / name)) << name;
  EXPECT_TRUE(file_nonempty(dir / "insp" / "run.txt"));
}

TEST(CliInspect, SingleViewOmitsAbsentMapsButKeepsBothReconstructions) {
  fs::path dir = fresh_dir("inspect_single");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  ASSERT_EQ(run_cli("train --data ds --out run --config tiny.cfg", dir).exit_code, 0);
  RunResult r = run_cli(
      "inspect --checkpoint run/stage2.ckpt --data ds --out insp --views rgb --sample-id "
      "s000002",
      dir);
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_FALSE(fs::exists(dir / "insp" / "input_hha.pgm"));
  EXPECT_FALSE(fs::exists(dir / "insp" / "feat_depth.pgm"));
  EXPECT_FALSE(fs::exists(dir / "insp" / "hidden_joint.pgm"));
  EXPECT_TRUE(fs::exists(dir / "insp" / "hidden_rgb_only.pgm"));
  EXPECT_TRUE(fs::exists(dir / "insp" / "recon_rgb.pgm"));
  EXPECT_TRUE(fs::exists(dir / "insp" / "recon_depth.pgm"));
  EXPECT_NE(slurp(dir / "insp" / "run.txt").find("sample_id=s000002"), std::string::npos);
}

TEST(CliInspect, StageOneCheckpointIsRejected) {
  fs::path dir = fresh_dir("inspect_stage1");
  make_dataset(dir);
  write_tiny_config(dir / "tiny.cfg", "ss");
  ASSERT_EQ(run_cli("train --data ds --out run --config tiny.cfg --stage 1", dir).exit_code,
            0);
  RunResult r = run_cli("inspect --checkpoint run/stage1.ckpt --data ds --out insp", dir);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("stage-2"), std::string::npos);
}

TEST(CliGradcheck, PassesCleanAndFlagsInjectedFault) {
  fs::path dir = fresh_dir("gradcheck");
  RunResult clean = run_cli("gradcheck --seed 99", dir);
  EXPECT_EQ(clean.exit_code, 0) << clean.out;
  EXPECT_NE(clean.out.find("conv2d"), std::string::npos);
  EXPECT_NE(clean.out.find("cross_entropy"), std::string::npos);
  EXPECT_NE(clean.out.find("upsample_bilinear"), std::string::npos);
  EXPECT_EQ(clean.out.find("FAIL"), std::string::npos);

  RunResult faulty = run_cli("gradcheck --inject-fault", dir);
  EXPECT_EQ(faulty.exit_code, 1);
  EXPECT_NE(faulty.out.find("faulty_scale"), std::string::npos);
  EXPECT_NE(faulty.out.find("FAIL"), std::string::npos);
}

}  // namespace
