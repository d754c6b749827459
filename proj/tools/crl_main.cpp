#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crl/cli.hpp"
#include "crl/dataset_io.hpp"
#include "crl/gradcheck.hpp"
#include "crl/train.hpp"

// Command-line front end: gen-data, train, eval, inspect, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

namespace {

namespace fs = std::filesystem;
using namespace crl;

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += " ";
    s += argv[i];
  }
  return s;
}

/// Manifest path for a directory output: a sibling "<dir>.run.txt", never a
/// file inside, so regenerating the directory stays byte-identical.
fs::path sibling_manifest(std::string out) {
  while (!out.empty() && (out.back() == '/' || out.back() == '\\')) out.pop_back();
  CRL_CHECK(!out.empty(), "output path reduces to nothing");
  return fs::path(out + ".run.txt");
}

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 1;
  int count = 200;
  int size = 32;
  int classes = 5;
};

int run_gen_data(const GenDataArgs& a, const std::string& cmdline) {
  const std::string started = iso8601_utc_now();
  SceneSpec spec;
  spec.seed = a.seed;
  spec.height = a.size;
  spec.width = a.size;
  spec.classes = a.classes;
  spec.validate();
  CRL_CHECK(a.count >= 1, "gen-data: --count must be >= 1, got " << a.count);

  write_dataset(a.out, spec, a.count);

  RunManifest m;
  m.command = cmdline;
  m.add("started_utc", started);
  m.add("finished_utc", iso8601_utc_now());
  m.add("seed", std::to_string(a.seed));
  m.add("output.dataset", a.out);
  m.add("dataset_header_sha1", sha1_git_blob_hex(fs::path(a.out) / "header.txt"));
  m.add("count", std::to_string(a.count));
  m.add("classes", std::to_string(a.classes));
  m.add("size", std::to_string(a.size));
  m.write(sibling_manifest(a.out));

  std::cout << "wrote " << a.count << " samples (" << a.classes << " classes, " << a.size
            << "x" << a.size << ") to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string setting;  // empty = keep the config file's choice
  std::string stage = "all";
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_train(const TrainArgs& a, const std::string& cmdline) {
  const std::string started = iso8601_utc_now();
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : read_config_file(a.config);
  if (!a.setting.empty()) cfg.setting = parse_setting(a.setting);
  if (a.seed_given) cfg.seed = a.seed;
  cfg.validate();

  Dataset data = load_dataset(a.data);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  const fs::path ck1_path = out / "stage1.ckpt";
  const fs::path ck2_path = out / "stage2.ckpt";

  std::vector<LossRow> rows;
  bool ran1 = false, ran2 = false;
  Model s1, s2;
  if (a.stage == "1" || a.stage == "all") {
    s1 = train_stage1(cfg, data, &rows);
    save_checkpoint(ck1_path, to_checkpoint(s1));
    ran1 = true;
    std::cout << "stage 1: " << cfg.stage1_iterations << " iterations, final total "
              << (rows.empty() ? 0.0 : rows.back().total) << "\n";
  }
  if (a.stage == "2" || a.stage == "all") {
    Model base = ran1 ? s1 : model_from_checkpoint(load_checkpoint(ck1_path));
    const std::size_t before = rows.size();
    s2 = train_stage2(cfg, data, base, &rows);
    save_checkpoint(ck2_path, to_checkpoint(s2));
    ran2 = true;
    std::cout << "stage 2: " << cfg.stage2_iterations << " iterations, final total "
              << (rows.size() > before ? rows.back().total : 0.0) << "\n";
  }
  write_loss_csv(out / "loss.csv", rows);

  RunManifest m;
  m.command = cmdline;
  m.add("started_utc", started);
  m.add("finished_utc", iso8601_utc_now());
  m.add("seed", std::to_string(cfg.seed));
  m.add("input.data", a.data);
  if (!a.config.empty()) m.add("input.config", a.config);
  if (ran1) m.add("output.stage1", ck1_path.string());
  if (ran2) m.add("output.stage2", ck2_path.string());
  m.add("output.loss_csv", (out / "loss.csv").string());
  m.add("dataset_header_sha1", sha1_git_blob_hex(fs::path(a.data) / "header.txt"));
  for (const auto& kv : config_entries(cfg)) m.add("config." + kv.first, kv.second);
  m.write(out / "run.txt");
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string views = "both";
  std::string out;
};

int run_eval(const EvalArgs& a, const std::string& cmdline) {
  const std::string started = iso8601_utc_now();
  Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  Dataset data = load_dataset(a.data);
  const Views views = parse_views(a.views);
  EvalResult r = evaluate(model, data, views);
  write_eval_csv(a.out, model, views, r);

  RunManifest m;
  m.command = cmdline;
  m.add("started_utc", started);
  m.add("finished_utc", iso8601_utc_now());
  m.add("seed", std::to_string(model.config.seed));
  m.add("input.checkpoint", a.checkpoint);
  m.add("input.data", a.data);
  m.add("output.csv", a.out);
  m.add("dataset_header_sha1", sha1_git_blob_hex(fs::path(a.data) / "header.txt"));
  m.write(fs::path(a.out + ".run.txt"));

  std::cout << "evaluated " << r.samples << " samples (" << to_string(views)
            << "): mean IoU " << r.mean_iou;
  if (!std::isnan(r.rmse)) std::cout << ", rmse " << r.rmse;
  std::cout << ", total " << r.total << "\n";
  return 0;
}

struct InspectArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string sample_id;  // empty = first sample
  std::string views = "both";
};

int run_inspect(const InspectArgs& a, const std::string& cmdline) {
  const std::string started = iso8601_utc_now();
  Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  CRL_CHECK(model.stage == 2,
            "inspect: needs a stage-2 checkpoint (hidden and reconstruction maps)");
  Dataset data = load_dataset(a.data);
  const Views views = parse_views(a.views);
  const Sample* sample = nullptr;
  if (a.sample_id.empty()) {
    sample = &data.samples.front();
  } else {
    for (const Sample& s : data.samples)
      if (s.id == a.sample_id) sample = &s;
    CRL_CHECK(sample != nullptr, "inspect: no sample with id '" << a.sample_id << "'");
  }

  fs::create_directories(a.out);
  const fs::path out(a.out);
  const bool use_rgb = views != Views::Depth;
  const bool use_depth = views != Views::Rgb;

  std::vector<std::pair<std::string, std::string>> index;
  auto dump = [&](const std::string& file, const Tensor& t, const std::string& what) {
    if (t.empty()) return;
    write_pgm(out / file, channel_mean(t));
    index.emplace_back(file, what);
  };

  if (use_rgb) dump("input_rgb.pgm", sample->rgb, "input image, channel mean");
  if (use_depth) dump("input_hha.pgm", sample->hha, "encoded depth input, channel mean");

  Prediction p = predict(model, *sample, views);
  dump("feat_rgb.pgm", p.feat_rgb, "image-branch feature map");
  dump("feat_depth.pgm", p.feat_depth, "depth-branch feature map");
  if (use_rgb && use_depth) {
    dump("hidden_joint.pgm", p.hidden, "shared code from both views");
    dump("hidden_rgb_only.pgm", predict(model, *sample, Views::Rgb).hidden,
         "shared code from the image view alone");
    dump("hidden_depth_only.pgm", predict(model, *sample, Views::Depth).hidden,
         "shared code from the depth view alone");
  } else {
    dump(use_rgb ? "hidden_rgb_only.pgm" : "hidden_depth_only.pgm", p.hidden,
         "shared code from the supplied view");
  }
  dump("recon_rgb.pgm", p.recon_rgb, "reconstructed image-branch features");
  dump("recon_depth.pgm", p.recon_depth, "reconstructed depth-branch features");
  if (!p.seg_logits.empty()) {
    LabelMap pred = argmax_labels(p.seg_logits);
    Tensor labels({pred.height, pred.width});
    for (std::size_t i = 0; i < pred.size(); ++i) labels[i] = pred.v[i];
    dump("pred_seg.pgm", labels, "predicted class map");
  }
  dump("pred_depth.pgm", p.depth, "predicted depth map");

  std::ofstream idx(out / "index.txt");
  CRL_CHECK(idx, "inspect: cannot write index in " << a.out);
  for (const auto& kv : index) idx << kv.first << "  " << kv.second << "\n";
  idx.close();
  CRL_CHECK(idx.good(), "inspect: index write failed");

  RunManifest m;
  m.command = cmdline;
  m.add("started_utc", started);
  m.add("finished_utc", iso8601_utc_now());
  m.add("seed", std::to_string(model.config.seed));
  m.add("input.checkpoint", a.checkpoint);
  m.add("input.data", a.data);
  m.add("sample_id", sample->id);
  m.add("output.dir", a.out);
  m.add("dataset_header_sha1", sha1_git_blob_hex(fs::path(a.data) / "header.txt"));
  m.write(out / "run.txt");

  std::cout << "wrote " << index.size() << " maps for sample " << sample->id << " to "
            << a.out << "\n";
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 1234;
  bool inject_fault = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<GradCase> cases = standard_gradcheck_cases();
  if (a.inject_fault) cases.push_back(inject_fault_case());
  const double threshold = 1e-4;
  int failures = 0;
  for (const GradCase& c : cases) {
    const double worst = c.max_rel(a.seed);
    const bool ok = worst < threshold;
    failures += ok ? 0 : 1;
    std::cout << c.name << " max_rel=" << worst << (ok ? " PASS" : " FAIL") << "\n";
  }
  std::cout << cases.size() << " ops checked, " << failures << " over " << threshold
            << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-branch segmentation/depth network with a shared two-view code"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "dataset directory to create")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--count", gen.count, "number of samples")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "image height and width (multiple of 4)")
      ->check(CLI::Range(8, 4096));
  gen_cmd->add_option("--classes", gen.classes, "class count including background")
      ->check(CLI::Range(2, 64));

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "run the two-stage training");
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "output directory for checkpoints and loss log")
      ->required();
  train_cmd->add_option("--setting", tr.setting, "task setting")
      ->check(CLI::IsMember({"ss", "ssd"}));
  train_cmd->add_option("--stage", tr.stage, "which stage to run")
      ->check(CLI::IsMember({"1", "2", "all"}));
  train_cmd->add_option("--config", tr.config, "key=value config file");
  CLI::Option* seed_opt = train_cmd->add_option("--seed", tr.seed, "training seed");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "dataset directory")->required();
  eval_cmd->add_option("--views", ev.views, "views available at test time")
      ->check(CLI::IsMember({"rgb", "depth", "both"}));
  eval_cmd->add_option("--out", ev.out, "metrics CSV to write")->required();

  InspectArgs ins;
  CLI::App* inspect_cmd =
      app.add_subcommand("inspect", "dump feature/hidden/reconstruction maps as PGM");
  inspect_cmd->add_option("--checkpoint", ins.checkpoint, "stage-2 model checkpoint")
      ->required();
  inspect_cmd->add_option("--data", ins.data, "dataset directory")->required();
  inspect_cmd->add_option("--out", ins.out, "output directory")->required();
  inspect_cmd->add_option("--sample-id", ins.sample_id, "sample to inspect (default: first)");
  inspect_cmd->add_option("--views", ins.views, "views to feed the network")
      ->check(CLI::IsMember({"rgb", "depth", "both"}));

  GradcheckArgs gc;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference audit of every op");
  gradcheck_cmd->add_option("--seed", gc.seed, "evaluation-point seed");
  gradcheck_cmd->add_flag("--inject-fault", gc.inject_fault)->group("");  // test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // normalize every usage error to 2
  }

  const std::string cmdline = join_args(argc, argv);
  try {
    if (gen_cmd->parsed()) return run_gen_data(gen, cmdline);
    if (train_cmd->parsed()) {
      tr.seed_given = seed_opt->count() > 0;
      return run_train(tr, cmdline);
    }
    if (eval_cmd->parsed()) return run_eval(ev, cmdline);
    if (inspect_cmd->parsed()) return run_inspect(ins, cmdline);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no command\n";
  return 2;
}
