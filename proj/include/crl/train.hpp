#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "crl/branch.hpp"
#include "crl/checkpoint.hpp"
#include "crl/dataset.hpp"
#include "crl/dataset_io.hpp"
#include "crl/losses.hpp"
#include "crl/metrics.hpp"
#include "crl/mvae.hpp"
#include "crl/optim.hpp"

// Two-stage training. Stage 1 fits each modality branch to its own task with
// SGD under a polynomial learning-rate decay. Stage 2 discards the stage-1
// heads, adds the shared two-view autoencoder, freezes the branch encoders
// and trains everything else with Adam: both task heads now read the
// *reconstructed* feature maps, so either modality alone can drive both heads
// at test time.

namespace crl {

enum class Setting { SS, SSD };
enum class DepthLossKind { SmoothL1, L2, ScaleInvariant };
enum class Views { Rgb, Depth, Both };

inline const char* to_string(Setting s) { return s == Setting::SS ? "ss" : "ssd"; }

inline Setting parse_setting(const std::string& s) {
  if (s == "ss") return Setting::SS;
  if (s == "ssd") return Setting::SSD;
  throw Error("unknown setting '" + s + "' (expected ss or ssd)");
}

inline const char* to_string(DepthLossKind k) {
  switch (k) {
    case DepthLossKind::SmoothL1: return "smooth-l1";
    case DepthLossKind::L2: return "l2";
    default: return "scale-invariant";
  }
}

inline DepthLossKind parse_depth_loss(const std::string& s) {
  if (s == "smooth-l1") return DepthLossKind::SmoothL1;
  if (s == "l2") return DepthLossKind::L2;
  if (s == "scale-invariant") return DepthLossKind::ScaleInvariant;
  throw Error("unknown depth loss '" + s + "' (expected smooth-l1, l2 or scale-invariant)");
}

inline const char* to_string(Views v) {
  switch (v) {
    case Views::Rgb: return "rgb";
    case Views::Depth: return "depth";
    default: return "both";
  }
}

inline Views parse_views(const std::string& s) {
  if (s == "rgb") return Views::Rgb;
  if (s == "depth") return Views::Depth;
  if (s == "both") return Views::Both;
  throw Error("unknown views '" + s + "' (expected rgb, depth or both)");
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  Setting setting = Setting::SS;
  int stage1_iterations = 2000;
  int stage2_iterations = 1000;
  int batch_size = 8;
  double base_lr = 3e-4;      // stage-1 SGD, decayed polynomially
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double stage2_lr = 1e-3;    // stage-2 Adam, held constant
  LossWeights weights;
  DepthLossKind depth_loss = DepthLossKind::SmoothL1;
  bool augment = true;
  std::uint64_t seed = 1;
  // Shared architecture knobs.
  int enc1_channels = 8;
  int enc2_channels = 16;
  int feature_channels = 16;
  int downsample = 4;
  std::vector<int> aspp_rates = {1, 2, 4};
  int hidden_channels = 8;
  Activation hidden_act = Activation::Tanh;
  Activation output_act = Activation::Identity;

  void validate() const {
    CRL_CHECK(stage1_iterations >= 0, "TrainConfig: negative stage-1 iterations");
    CRL_CHECK(stage2_iterations >= 0, "TrainConfig: negative stage-2 iterations");
    CRL_CHECK(batch_size >= 1, "TrainConfig: batch size must be >= 1, got " << batch_size);
    CRL_CHECK(base_lr > 0.0, "TrainConfig: base LR must be positive, got " << base_lr);
    CRL_CHECK(stage2_lr > 0.0, "TrainConfig: stage-2 LR must be positive, got " << stage2_lr);
    CRL_CHECK(poly_power > 0.0, "TrainConfig: poly power must be positive");
    CRL_CHECK(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum outside [0, 1)");
    CRL_CHECK(weight_decay >= 0.0, "TrainConfig: negative weight decay");
    CRL_CHECK(weights.lambda_rec >= 0.0, "TrainConfig: negative reconstruction weight");
    CRL_CHECK(weights.lambda_corr >= 0.0, "TrainConfig: negative correlation weight");
    CRL_CHECK(weights.lambda_corr == 0.0 || batch_size >= 2,
              "TrainConfig: the correlation bonus needs batches of at least 2 samples");
  }
};

namespace train_detail {

inline std::string join_rates(const std::vector<int>& rates) {
  std::ostringstream oss;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (i) oss << ",";
    oss << rates[i];
  }
  return oss.str();
}

inline std::vector<int> split_rates(const std::string& s) {
  std::vector<int> out;
  std::istringstream iss(s);
  std::string part;
  while (std::getline(iss, part, ',')) {
    try {
      std::size_t used = 0;
      int v = std::stoi(part, &used);
      CRL_CHECK(used == part.size(), "trailing junk");
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error("config: bad dilation rate list '" + s + "'");
    }
  }
  CRL_CHECK(!out.empty(), "config: empty dilation rate list");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    CRL_CHECK(used == v.size(), "trailing junk");
    return x;
  } catch (const std::exception&) {
    throw Error("config: bad numeric value '" + v + "' for key '" + key + "'");
  }
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int x = std::stoi(v, &used);
    CRL_CHECK(used == v.size(), "trailing junk");
    return x;
  } catch (const std::exception&) {
    throw Error("config: bad integer value '" + v + "' for key '" + key + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long x = std::stoull(v, &used);
    CRL_CHECK(used == v.size(), "trailing junk");
    return x;
  } catch (const std::exception&) {
    throw Error("config: bad integer value '" + v + "' for key '" + key + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config: bad boolean value '" + v + "' for key '" + key + "'");
}

}  // namespace train_detail

/// Ordered key=value view of the config; the checkpoint meta block and the
/// config file format are both this list verbatim.
inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  using dataset_io_detail::fmt_double;
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("setting", to_string(c.setting));
  e.emplace_back("stage1_iterations", std::to_string(c.stage1_iterations));
  e.emplace_back("stage2_iterations", std::to_string(c.stage2_iterations));
  e.emplace_back("batch_size", std::to_string(c.batch_size));
  e.emplace_back("base_lr", fmt_double(c.base_lr));
  e.emplace_back("poly_power", fmt_double(c.poly_power));
  e.emplace_back("momentum", fmt_double(c.momentum));
  e.emplace_back("weight_decay", fmt_double(c.weight_decay));
  e.emplace_back("stage2_lr", fmt_double(c.stage2_lr));
  e.emplace_back("lambda_rec", fmt_double(c.weights.lambda_rec));
  e.emplace_back("lambda_corr", fmt_double(c.weights.lambda_corr));
  e.emplace_back("lambda_si", fmt_double(c.weights.lambda_si));
  e.emplace_back("depth_loss", to_string(c.depth_loss));
  e.emplace_back("augment", c.augment ? "true" : "false");
  e.emplace_back("seed", std::to_string(c.seed));
  e.emplace_back("enc1_channels", std::to_string(c.enc1_channels));
  e.emplace_back("enc2_channels", std::to_string(c.enc2_channels));
  e.emplace_back("feature_channels", std::to_string(c.feature_channels));
  e.emplace_back("downsample", std::to_string(c.downsample));
  e.emplace_back("aspp_rates", train_detail::join_rates(c.aspp_rates));
  e.emplace_back("hidden_channels", std::to_string(c.hidden_channels));
  e.emplace_back("hidden_act", to_string(c.hidden_act));
  e.emplace_back("output_act", to_string(c.output_act));
  return e;
}

inline void apply_config_entry(TrainConfig& c, const std::string& key,
                               const std::string& value) {
  using namespace train_detail;
  if (key == "setting") c.setting = parse_setting(value);
  else if (key == "stage1_iterations") c.stage1_iterations = to_int(key, value);
  else if (key == "stage2_iterations") c.stage2_iterations = to_int(key, value);
  else if (key == "batch_size") c.batch_size = to_int(key, value);
  else if (key == "base_lr") c.base_lr = to_double(key, value);
  else if (key == "poly_power") c.poly_power = to_double(key, value);
  else if (key == "momentum") c.momentum = to_double(key, value);
  else if (key == "weight_decay") c.weight_decay = to_double(key, value);
  else if (key == "stage2_lr") c.stage2_lr = to_double(key, value);
  else if (key == "lambda_rec") c.weights.lambda_rec = to_double(key, value);
  else if (key == "lambda_corr") c.weights.lambda_corr = to_double(key, value);
  else if (key == "lambda_si") c.weights.lambda_si = to_double(key, value);
  else if (key == "depth_loss") c.depth_loss = parse_depth_loss(value);
  else if (key == "augment") c.augment = to_bool(key, value);
  else if (key == "seed") c.seed = to_u64(key, value);
  else if (key == "enc1_channels") c.enc1_channels = to_int(key, value);
  else if (key == "enc2_channels") c.enc2_channels = to_int(key, value);
  else if (key == "feature_channels") c.feature_channels = to_int(key, value);
  else if (key == "downsample") c.downsample = to_int(key, value);
  else if (key == "aspp_rates") c.aspp_rates = split_rates(value);
  else if (key == "hidden_channels") c.hidden_channels = to_int(key, value);
  else if (key == "hidden_act") c.hidden_act = parse_activation(value);
  else if (key == "output_act") c.output_act = parse_activation(value);
  else throw Error("config: unknown key '" + key + "'");
}

/// key=value lines; blank lines and '#' comments are skipped.
inline TrainConfig read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  CRL_CHECK(is, "config: cannot open " << path.string());
  TrainConfig c;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    CRL_CHECK(eq != std::string::npos && eq > 0,
              "config: malformed line " << line_no << " in " << path.string());
    apply_config_entry(c, line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

inline void write_config_file(const std::filesystem::path& path, const TrainConfig& c) {
  std::ofstream os(path);
  CRL_CHECK(os, "config: cannot open " << path.string() << " for writing");
  for (const auto& kv : config_entries(c)) os << kv.first << "=" << kv.second << "\n";
  os.close();
  CRL_CHECK(os.good(), "config: write to " << path.string() << " failed");
}

// ---------------------------------------------------------------------------
// Loss logging

/// One logged optimization step. Stage-1 rows have no reconstruction or
/// correlation terms; those fields stay NaN and serialize as empty cells.
struct LossRow {
  int stage = 0;
  long iteration = 0;
  double lr = 0.0;
  double loss_ss_rgb = std::numeric_limits<double>::quiet_NaN();
  double loss_d = std::numeric_limits<double>::quiet_NaN();
  double loss_rec = std::numeric_limits<double>::quiet_NaN();
  double corr = std::numeric_limits<double>::quiet_NaN();
  double total = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kLossCsvHeader =
    "stage,iteration,lr,loss_ss_rgb,loss_d,loss_rec,corr,total";

namespace train_detail {

inline std::string csv_cell(double v) {
  return std::isnan(v) ? std::string() : dataset_io_detail::fmt_double(v);
}

inline double parse_cell(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  return to_double("csv cell", s);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace train_detail

inline void write_loss_csv(const std::filesystem::path& path,
                           const std::vector<LossRow>& rows) {
  std::ofstream os(path);
  CRL_CHECK(os, "loss csv: cannot open " << path.string() << " for writing");
  os << kLossCsvHeader << "\n";
  for (const LossRow& r : rows) {
    os << r.stage << "," << r.iteration << "," << train_detail::csv_cell(r.lr) << ","
       << train_detail::csv_cell(r.loss_ss_rgb) << "," << train_detail::csv_cell(r.loss_d)
       << "," << train_detail::csv_cell(r.loss_rec) << "," << train_detail::csv_cell(r.corr)
       << "," << train_detail::csv_cell(r.total) << "\n";
  }
  os.close();
  CRL_CHECK(os.good(), "loss csv: write to " << path.string() << " failed");
}

inline std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  CRL_CHECK(is, "loss csv: cannot open " << path.string());
  std::string line;
  CRL_CHECK(std::getline(is, line) && line == kLossCsvHeader,
            "loss csv: unexpected header in " << path.string());
  std::vector<LossRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = train_detail::split_csv(line);
    CRL_CHECK(cells.size() == 8, "loss csv: expected 8 cells, got " << cells.size()
                                     << " in " << path.string());
    LossRow r;
    r.stage = train_detail::to_int("stage", cells[0]);
    r.iteration = train_detail::to_int("iteration", cells[1]);
    r.lr = train_detail::parse_cell(cells[2]);
    r.loss_ss_rgb = train_detail::parse_cell(cells[3]);
    r.loss_d = train_detail::parse_cell(cells[4]);
    r.loss_rec = train_detail::parse_cell(cells[5]);
    r.corr = train_detail::parse_cell(cells[6]);
    r.total = train_detail::parse_cell(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  TrainConfig config;
  int classes = 0;
  int stage = 0;  // 1 after branch pretraining, 2 once the shared space exists
  BranchTensors rgb;
  BranchTensors depth;
  MvaeTensors mvae;  // populated only at stage 2
  // Final states of the batch-order and augmentation streams, kept in the
  // checkpoint for provenance (training never resumes mid-stage).
  std::string rng_batch_state;
  std::string rng_aug_state;
};

inline BranchConfig rgb_branch_config(const TrainConfig& c, int classes) {
  BranchConfig bc;
  bc.in_channels = 3;
  bc.enc1_channels = c.enc1_channels;
  bc.enc2_channels = c.enc2_channels;
  bc.feature_channels = c.feature_channels;
  bc.downsample = c.downsample;
  bc.aspp_rates = c.aspp_rates;
  bc.head = HeadKind::Segmentation;
  bc.classes = classes;
  return bc;
}

inline BranchConfig depth_branch_config(const TrainConfig& c, int classes) {
  BranchConfig bc = rgb_branch_config(c, classes);
  bc.head = c.setting == Setting::SSD ? HeadKind::DepthRegression : HeadKind::Segmentation;
  return bc;
}

inline MvaeConfig mvae_config(const TrainConfig& c) {
  MvaeConfig mc;
  mc.feature_channels = c.feature_channels;
  mc.hidden_channels = c.hidden_channels;
  mc.hidden_act = c.hidden_act;
  mc.output_act = c.output_act;
  return mc;
}

/// Stage 2 freezes exactly the three encoder convolutions of each branch;
/// the dilated taps, the mixing conv, the decoder conv and the heads all keep
/// training so the shared space can be absorbed downstream.
inline bool frozen_in_stage2(const std::string& name) {
  return name.find(".enc") != std::string::npos;
}

inline Checkpoint to_checkpoint(const Model& m) {
  CRL_CHECK(m.stage == 1 || m.stage == 2, "to_checkpoint: model stage " << m.stage);
  Checkpoint ck;
  ck.set_meta("format", "crl-model");
  ck.set_meta("stage", std::to_string(m.stage));
  ck.set_meta("classes", std::to_string(m.classes));
  ck.set_meta("setting", to_string(m.config.setting));
  for (const auto& kv : config_entries(m.config)) ck.set_meta("config." + kv.first, kv.second);
  if (!m.rng_batch_state.empty()) ck.set_meta("rng.batch", m.rng_batch_state);
  if (!m.rng_aug_state.empty()) ck.set_meta("rng.aug", m.rng_aug_state);
  const bool stage2 = m.stage == 2;
  auto put_branch = [&](const std::string& prefix, const BranchTensors& p) {
    for_each_branch_param(p, [&](const std::string& name, const ConvParam<Tensor>& cp) {
      const std::string full = prefix + "." + name;
      const bool frozen = stage2 && frozen_in_stage2(full);
      ck.add(full + ".w", cp.w, frozen);
      ck.add(full + ".b", cp.b, frozen);
    });
  };
  put_branch("rgb", m.rgb);
  put_branch("depth", m.depth);
  if (stage2) {
    for_each_mvae_param(m.mvae, [&](const std::string& name, const Tensor& t) {
      ck.add("mvae." + name, t, false);
    });
  }
  return ck;
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  const std::string* format = ck.find_meta("format");
  CRL_CHECK(format != nullptr && *format == "crl-model",
            "checkpoint: not a model checkpoint (missing format meta)");
  Model m;
  m.stage = train_detail::to_int("stage", ck.meta_value("stage"));
  CRL_CHECK(m.stage == 1 || m.stage == 2, "checkpoint: bad stage " << m.stage);
  m.classes = train_detail::to_int("classes", ck.meta_value("classes"));
  CRL_CHECK(m.classes >= 2, "checkpoint: bad class count " << m.classes);
  for (const auto& kv : ck.meta) {
    if (kv.first.rfind("config.", 0) == 0)
      apply_config_entry(m.config, kv.first.substr(7), kv.second);
  }
  m.config.validate();
  if (const std::string* v = ck.find_meta("rng.batch")) m.rng_batch_state = *v;
  if (const std::string* v = ck.find_meta("rng.aug")) m.rng_aug_state = *v;
  Rng scratch(0);  // shapes only; every value is overwritten below
  m.rgb = init_branch_params(rgb_branch_config(m.config, m.classes), scratch);
  m.depth = init_branch_params(depth_branch_config(m.config, m.classes), scratch);
  auto fill_branch = [&](const std::string& prefix, BranchTensors& p) {
    for_each_branch_param(p, [&](const std::string& name, ConvParam<Tensor>& cp) {
      const std::string full = prefix + "." + name;
      cp.w = ck.tensor_like(full + ".w", cp.w.shape());
      cp.b = ck.tensor_like(full + ".b", cp.b.shape());
    });
  };
  fill_branch("rgb", m.rgb);
  fill_branch("depth", m.depth);
  if (m.stage == 2) {
    m.mvae = mvae_init(mvae_config(m.config), scratch);
    for_each_mvae_param(m.mvae, [&](const std::string& name, Tensor& t) {
      t = ck.tensor_like("mvae." + name, t.shape());
    });
  }
  return m;
}

// ---------------------------------------------------------------------------
// Shared forward plumbing

struct LiftedModel {
  BranchVars rgb;
  BranchVars depth;
  MvaeVars mvae;
  std::vector<BoundParam> params;
};

inline LiftedModel lift_model(Tape& t, Model& m, bool with_mvae) {
  LiftedModel lm;
  lm.rgb = lift(t, m.rgb, "rgb", &lm.params);
  lm.depth = lift(t, m.depth, "depth", &lm.params);
  if (with_mvae) lm.mvae = lift(t, m.mvae, "mvae", &lm.params);
  return lm;
}

namespace train_detail {

inline Var depth_task_loss(Tape& t, Var pred, const Tensor& target, const TrainConfig& cfg,
                           const LabelMap* mask) {
  switch (cfg.depth_loss) {
    case DepthLossKind::SmoothL1: return smooth_l1_loss(t, pred, target, mask);
    case DepthLossKind::L2: return l2_loss(t, pred, target, mask);
    default: return scale_invariant_loss(t, pred, target, cfg.weights.lambda_si, mask);
  }
}

inline Var add_into(Tape& t, Var acc, Var term) {
  return acc.valid() ? add(t, acc, term) : term;
}

// Normalized working copies; training never touches the caller's samples.
inline std::vector<Sample> prepare_samples(const Dataset& data) {
  std::vector<Sample> prep;
  prep.reserve(data.samples.size());
  for (const Sample& s : data.samples) {
    prep.push_back(s);
    normalize(prep.back());
  }
  return prep;
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Stage 1

/// Trains both branches on their stage-1 tasks (shared tape, disjoint
/// parameters, so the joint step equals two independent ones). Appends one
/// LossRow per iteration to rows when given; losses are measured before the
/// step, so row 0 is the initialization loss.
inline Model train_stage1(const TrainConfig& cfg, const Dataset& data,
                          std::vector<LossRow>* rows = nullptr) {
  cfg.validate();
  const int count = static_cast<int>(data.samples.size());
  CRL_CHECK(count >= 1, "train_stage1: empty dataset");
  CRL_CHECK(cfg.batch_size <= count, "train_stage1: batch size " << cfg.batch_size
                                         << " exceeds dataset size " << count);
  const int K = data.header.classes;
  const BranchConfig rbc = rgb_branch_config(cfg, K);
  const BranchConfig dbc = depth_branch_config(cfg, K);

  Rng init_rng(mix_seed(cfg.seed, 11));
  Rng batch_rng(mix_seed(cfg.seed, 12));
  Rng aug_rng(mix_seed(cfg.seed, 13));

  Model m;
  m.config = cfg;
  m.classes = K;
  m.stage = 1;
  m.rgb = init_branch_params(rbc, init_rng);
  m.depth = init_branch_params(dbc, init_rng);

  std::vector<Sample> prep = train_detail::prepare_samples(data);
  Sgd opt(cfg.momentum, cfg.weight_decay);
  std::vector<std::vector<int>> batches;
  std::size_t next_batch = 0;

  for (long it = 0; it < cfg.stage1_iterations; ++it) {
    if (next_batch == batches.size()) {
      batches = make_batches(count, cfg.batch_size, batch_rng);
      next_batch = 0;
    }
    const std::vector<int>& batch = batches[next_batch++];
    const double lr = poly_lr(cfg.base_lr, it, cfg.stage1_iterations, cfg.poly_power);

    Tape t;
    LiftedModel lm = lift_model(t, m, false);
    Var sum_rgb, sum_d;
    for (int idx : batch) {
      const Sample s = cfg.augment ? augment(prep[static_cast<std::size_t>(idx)], aug_rng)
                                   : prep[static_cast<std::size_t>(idx)];
      const int H = s.height(), W = s.width();
      Var fx = branch_forward(t, rbc, lm.rgb, t.leaf(s.rgb));
      Var fd = branch_forward(t, dbc, lm.depth, t.leaf(s.hha));
      Var lx = cross_entropy_loss(t, segmentation_head(t, lm.rgb.head, fx, H, W), s.labels)
                   .loss;
      Var ld;
      if (cfg.setting == Setting::SS) {
        ld = cross_entropy_loss(t, segmentation_head(t, lm.depth.head, fd, H, W), s.labels)
                 .loss;
      } else {
        Var pd = depth_head(t, lm.depth.head, fd, H, W);
        ld = train_detail::depth_task_loss(t, pd, s.depth_raw, cfg, &s.labels);
      }
      sum_rgb = train_detail::add_into(t, sum_rgb, lx);
      sum_d = train_detail::add_into(t, sum_d, ld);
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Var l_rgb = scale(t, sum_rgb, inv_b);
    Var l_d = scale(t, sum_d, inv_b);
    Var total = add(t, l_rgb, l_d);
    const double total_v = t.value(total).item();
    CRL_CHECK(std::isfinite(total_v),
              "train_stage1: non-finite loss " << total_v << " at iteration " << it);

    t.backward(total);
    for (const BoundParam& bp : lm.params) opt.step(bp.name, *bp.tensor, t.grad(bp.var), lr);

    if (rows != nullptr) {
      LossRow r;
      r.stage = 1;
      r.iteration = it;
      r.lr = lr;
      r.loss_ss_rgb = t.value(l_rgb).item();
      r.loss_d = t.value(l_d).item();
      r.total = total_v;
      rows->push_back(r);
    }
  }
  m.rng_batch_state = batch_rng.state();
  m.rng_aug_state = aug_rng.state();
  return m;
}

// ---------------------------------------------------------------------------
// Stage 2

namespace train_detail {

struct FrozenAudit {
  std::vector<std::pair<std::string, Tensor>> snapshot;

  void capture(Model& m) {
    snapshot.clear();
    auto grab = [&](const std::string& prefix, BranchTensors& p) {
      for_each_branch_param(p, [&](const std::string& name, ConvParam<Tensor>& cp) {
        const std::string full = prefix + "." + name;
        if (!frozen_in_stage2(full)) return;
        snapshot.emplace_back(full + ".w", cp.w);
        snapshot.emplace_back(full + ".b", cp.b);
      });
    };
    grab("rgb", m.rgb);
    grab("depth", m.depth);
    CRL_CHECK(!snapshot.empty(), "stage 2: nothing matched the freeze predicate");
  }

  void verify(Model& m, long it) const {
    std::size_t at = 0;
    auto check = [&](const std::string& prefix, BranchTensors& p) {
      for_each_branch_param(p, [&](const std::string& name, ConvParam<Tensor>& cp) {
        const std::string full = prefix + "." + name;
        if (!frozen_in_stage2(full)) return;
        for (const Tensor* cur : {&cp.w, &cp.b}) {
          const auto& [snap_name, snap] = snapshot[at++];
          CRL_CHECK(snap.size() == cur->size() &&
                        std::memcmp(snap.data(), cur->data(),
                                    snap.size() * sizeof(double)) == 0,
                    "stage 2: frozen tensor '" << snap_name << "' changed by iteration "
                                               << it);
        }
      });
    };
    check("rgb", m.rgb);
    check("depth", m.depth);
  }
};

}  // namespace train_detail

/// Continues from a stage-1 model: stage-1 heads are discarded, fresh heads
/// and the two-view autoencoder are initialized, the branch encoders freeze,
/// and Adam minimizes task losses on the reconstructed features plus the
/// weighted reconstruction term (and optional correlation bonus).
inline Model train_stage2(const TrainConfig& cfg, const Dataset& data, const Model& stage1,
                          std::vector<LossRow>* rows = nullptr) {
  cfg.validate();
  CRL_CHECK(stage1.stage == 1 || stage1.stage == 2,
            "train_stage2: input model has stage " << stage1.stage);
  const int count = static_cast<int>(data.samples.size());
  CRL_CHECK(count >= 1, "train_stage2: empty dataset");
  CRL_CHECK(cfg.batch_size <= count, "train_stage2: batch size " << cfg.batch_size
                                         << " exceeds dataset size " << count);
  const int K = data.header.classes;
  CRL_CHECK(stage1.classes == K, "train_stage2: stage-1 model trained for "
                                     << stage1.classes << " classes, dataset has " << K);
  auto arch = [](const TrainConfig& c) {
    return std::make_tuple(c.setting, c.enc1_channels, c.enc2_channels, c.feature_channels,
                           c.downsample, c.aspp_rates, c.hidden_channels, c.hidden_act,
                           c.output_act);
  };
  CRL_CHECK(arch(cfg) == arch(stage1.config),
            "train_stage2: architecture differs from the stage-1 model");

  const BranchConfig rbc = rgb_branch_config(cfg, K);
  const BranchConfig dbc = depth_branch_config(cfg, K);
  const MvaeConfig mc = mvae_config(cfg);

  Rng init_rng(mix_seed(cfg.seed, 21));
  Rng batch_rng(mix_seed(cfg.seed, 22));
  Rng aug_rng(mix_seed(cfg.seed, 23));

  Model m = stage1;
  m.config = cfg;
  m.stage = 2;
  // Fresh heads read the reconstructed maps; warm-starting from stage-1 heads
  // would tie them to the pre-autoencoder features, so they restart cold.
  m.rgb.head = conv_param_init(K, cfg.feature_channels, 1, 1, init_rng);
  m.depth.head = conv_param_init(dbc.head == HeadKind::Segmentation ? K : 1,
                                 cfg.feature_channels, 1, 1, init_rng);
  m.mvae = mvae_init(mc, init_rng);

  train_detail::FrozenAudit audit;
  audit.capture(m);

  std::vector<Sample> prep = train_detail::prepare_samples(data);
  Adam opt;
  std::vector<std::vector<int>> batches;
  std::size_t next_batch = 0;

  for (long it = 0; it < cfg.stage2_iterations; ++it) {
    if (next_batch == batches.size()) {
      batches = make_batches(count, cfg.batch_size, batch_rng);
      next_batch = 0;
    }
    const std::vector<int>& batch = batches[next_batch++];
    const double lr = cfg.stage2_lr;

    Tape t;
    LiftedModel lm = lift_model(t, m, true);
    Var sum_rgb, sum_d, sum_rec;
    std::vector<Var> hx_single, hd_single;
    for (int idx : batch) {
      const Sample s = cfg.augment ? augment(prep[static_cast<std::size_t>(idx)], aug_rng)
                                   : prep[static_cast<std::size_t>(idx)];
      const int H = s.height(), W = s.width();
      Var fx = branch_forward(t, rbc, lm.rgb, t.leaf(s.rgb));
      Var fd = branch_forward(t, dbc, lm.depth, t.leaf(s.hha));
      Var h = encode_joint(t, mc, lm.mvae, fx, fd);
      Decoded rec = decode(t, mc, lm.mvae, h);
      Var lx = cross_entropy_loss(t, segmentation_head(t, lm.rgb.head, rec.x, H, W),
                                  s.labels)
                   .loss;
      Var ld;
      if (cfg.setting == Setting::SS) {
        ld = cross_entropy_loss(t, segmentation_head(t, lm.depth.head, rec.d, H, W),
                                s.labels)
                 .loss;
      } else {
        Var pd = depth_head(t, lm.depth.head, rec.d, H, W);
        ld = train_detail::depth_task_loss(t, pd, s.depth_raw, cfg, &s.labels);
      }
      sum_rgb = train_detail::add_into(t, sum_rgb, lx);
      sum_d = train_detail::add_into(t, sum_d, ld);
      sum_rec = train_detail::add_into(t, sum_rec,
                                       reconstruction_loss(t, mc, lm.mvae, fx, fd));
      hx_single.push_back(encode_single(t, mc, lm.mvae, fx, ViewKind::Rgb));
      hd_single.push_back(encode_single(t, mc, lm.mvae, fd, ViewKind::Depth));
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Var l_rgb = scale(t, sum_rgb, inv_b);
    Var l_d = scale(t, sum_d, inv_b);
    Var l_rec = scale(t, sum_rec, inv_b);
    // Correlation of the two single-view hidden codes across the batch; a
    // final short batch of one sample cannot define it and logs an empty cell.
    Var corr;
    if (batch.size() >= 2)
      corr = correlation(t, stack(t, hx_single), stack(t, hd_single));
    Var total = total_objective(t, l_rgb, l_d, l_rec, corr, cfg.weights);
    const double total_v = t.value(total).item();
    CRL_CHECK(std::isfinite(total_v),
              "train_stage2: non-finite loss " << total_v << " at iteration " << it);

    t.backward(total);
    for (const BoundParam& bp : lm.params) {
      if (frozen_in_stage2(bp.name)) continue;
      opt.step(bp.name, *bp.tensor, t.grad(bp.var), lr);
    }
    if ((it + 1) % 100 == 0) audit.verify(m, it + 1);

    if (rows != nullptr) {
      LossRow r;
      r.stage = 2;
      r.iteration = it;
      r.lr = lr;
      r.loss_ss_rgb = t.value(l_rgb).item();
      r.loss_d = t.value(l_d).item();
      r.loss_rec = t.value(l_rec).item();
      r.corr = corr.valid() ? t.value(corr).item()
                            : std::numeric_limits<double>::quiet_NaN();
      r.total = total_v;
      rows->push_back(r);
    }
  }
  audit.verify(m, cfg.stage2_iterations);
  m.rng_batch_state = batch_rng.state();
  m.rng_aug_state = aug_rng.state();
  return m;
}

// ---------------------------------------------------------------------------
// Prediction

/// Outputs of one forward pass. Tensors are empty when the path that fills
/// them does not apply to the model's stage, setting, or supplied views.
struct Prediction {
  Tensor seg_logits;   // [K,H,W]
  Tensor depth;        // [H,W], strictly positive
  Tensor hidden;       // shared code (stage 2)
  Tensor recon_rgb;    // reconstructed RGB-branch feature map (stage 2)
  Tensor recon_depth;  // reconstructed depth-branch feature map (stage 2)
  Tensor feat_rgb;     // branch features actually computed from the input
  Tensor feat_depth;
};

/// Runs the model on one sample using only the selected views. Stage 2 routes
/// everything through the shared code: segmentation always reads the
/// reconstructed RGB features, so a depth-only input still segments, and an
/// RGB-only input still predicts depth. With both views and two segmentation
/// heads, the logits are averaged per pixel; a single view uses the RGB head
/// alone. The model is read, never written.
inline Prediction predict(Model& m, const Sample& raw, Views views) {
  CRL_CHECK(m.stage == 1 || m.stage == 2, "predict: model stage " << m.stage);
  const TrainConfig& cfg = m.config;
  const BranchConfig rbc = rgb_branch_config(cfg, m.classes);
  const BranchConfig dbc = depth_branch_config(cfg, m.classes);
  const MvaeConfig mc = mvae_config(cfg);
  const bool use_rgb = views != Views::Depth;
  const bool use_depth = views != Views::Rgb;

  Sample s = raw;
  normalize(s);
  const int H = s.height(), W = s.width();

  Tape t;
  LiftedModel lm = lift_model(t, m, m.stage == 2);
  Var fx, fd;
  if (use_rgb) fx = branch_forward(t, rbc, lm.rgb, t.leaf(s.rgb));
  if (use_depth) fd = branch_forward(t, dbc, lm.depth, t.leaf(s.hha));

  Prediction out;
  if (fx.valid()) out.feat_rgb = t.value(fx);
  if (fd.valid()) out.feat_depth = t.value(fd);

  if (m.stage == 1) {
    // No shared space yet: each branch can only serve its own modality.
    Var logits_rgb, logits_d;
    if (use_rgb) logits_rgb = segmentation_head(t, lm.rgb.head, fx, H, W);
    if (use_depth && dbc.head == HeadKind::Segmentation)
      logits_d = segmentation_head(t, lm.depth.head, fd, H, W);
    if (logits_rgb.valid() && logits_d.valid())
      out.seg_logits = t.value(scale(t, add(t, logits_rgb, logits_d), 0.5));
    else if (logits_rgb.valid())
      out.seg_logits = t.value(logits_rgb);
    else if (logits_d.valid())
      out.seg_logits = t.value(logits_d);
    if (use_depth && dbc.head == HeadKind::DepthRegression)
      out.depth = t.value(depth_head(t, lm.depth.head, fd, H, W));
    return out;
  }

  Var h = (use_rgb && use_depth) ? encode_joint(t, mc, lm.mvae, fx, fd)
          : use_rgb              ? encode_single(t, mc, lm.mvae, fx, ViewKind::Rgb)
                                 : encode_single(t, mc, lm.mvae, fd, ViewKind::Depth);
  Decoded rec = decode(t, mc, lm.mvae, h);
  out.hidden = t.value(h);
  out.recon_rgb = t.value(rec.x);
  out.recon_depth = t.value(rec.d);

  Var logits_rgb = segmentation_head(t, lm.rgb.head, rec.x, H, W);
  if (dbc.head == HeadKind::Segmentation) {
    if (use_rgb && use_depth) {
      Var logits_d = segmentation_head(t, lm.depth.head, rec.d, H, W);
      out.seg_logits = t.value(scale(t, add(t, logits_rgb, logits_d), 0.5));
    } else {
      out.seg_logits = t.value(logits_rgb);
    }
  } else {
    out.seg_logits = t.value(logits_rgb);
    out.depth = t.value(depth_head(t, lm.depth.head, rec.d, H, W));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  int samples = 0;
  double mean_iou = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_class_iou;  // NaN marks a class absent from the data
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double loss_ss_rgb = std::numeric_limits<double>::quiet_NaN();
  double loss_d = std::numeric_limits<double>::quiet_NaN();
  double loss_rec = std::numeric_limits<double>::quiet_NaN();
  double corr = std::numeric_limits<double>::quiet_NaN();
  double total = std::numeric_limits<double>::quiet_NaN();
};

/// Scores predictions (IoU over classes 1..K, RMSE over labeled pixels) under
/// the selected views. The loss columns are view-independent by design: they
/// re-measure the training objective (joint encoding, both views) so rows for
/// different view selections stay comparable; correlation pools the whole
/// evaluation set as one batch.
inline EvalResult evaluate(Model& m, const Dataset& data, Views views) {
  CRL_CHECK(!data.samples.empty(), "evaluate: empty dataset");
  CRL_CHECK(data.header.classes == m.classes, "evaluate: dataset has "
                                                  << data.header.classes
                                                  << " classes, model " << m.classes);
  const TrainConfig& cfg = m.config;
  const BranchConfig rbc = rgb_branch_config(cfg, m.classes);
  const BranchConfig dbc = depth_branch_config(cfg, m.classes);
  const MvaeConfig mc = mvae_config(cfg);

  EvalResult r;
  r.samples = static_cast<int>(data.samples.size());
  ConfusionMatrix cm(m.classes);
  RmseAccumulator rmse_acc;
  double sum_rgb = 0.0, sum_d = 0.0, sum_rec = 0.0;
  std::vector<Tensor> hx_vals, hd_vals;

  for (const Sample& raw : data.samples) {
    Sample s = raw;
    normalize(s);
    const int H = s.height(), W = s.width();

    // Objective re-measurement on the full sample, independent of `views`.
    {
      Tape t;
      LiftedModel lm = lift_model(t, m, m.stage == 2);
      Var fx = branch_forward(t, rbc, lm.rgb, t.leaf(s.rgb));
      Var fd = branch_forward(t, dbc, lm.depth, t.leaf(s.hha));
      Var lx, ld;
      if (m.stage == 1) {
        lx = cross_entropy_loss(t, segmentation_head(t, lm.rgb.head, fx, H, W), s.labels)
                 .loss;
        if (dbc.head == HeadKind::Segmentation)
          ld = cross_entropy_loss(t, segmentation_head(t, lm.depth.head, fd, H, W),
                                  s.labels)
                   .loss;
        else
          ld = train_detail::depth_task_loss(t, depth_head(t, lm.depth.head, fd, H, W),
                                             s.depth_raw, cfg, &s.labels);
      } else {
        Var h = encode_joint(t, mc, lm.mvae, fx, fd);
        Decoded recd = decode(t, mc, lm.mvae, h);
        lx = cross_entropy_loss(t, segmentation_head(t, lm.rgb.head, recd.x, H, W),
                                s.labels)
                 .loss;
        if (dbc.head == HeadKind::Segmentation)
          ld = cross_entropy_loss(t, segmentation_head(t, lm.depth.head, recd.d, H, W),
                                  s.labels)
                   .loss;
        else
          ld = train_detail::depth_task_loss(t, depth_head(t, lm.depth.head, recd.d, H, W),
                                             s.depth_raw, cfg, &s.labels);
        sum_rec += t.value(reconstruction_loss(t, mc, lm.mvae, fx, fd)).item();
        hx_vals.push_back(t.value(encode_single(t, mc, lm.mvae, fx, ViewKind::Rgb)));
        hd_vals.push_back(t.value(encode_single(t, mc, lm.mvae, fd, ViewKind::Depth)));
      }
      sum_rgb += t.value(lx).item();
      sum_d += t.value(ld).item();
    }

    // Metrics on the view-restricted prediction path.
    Prediction p = predict(m, raw, views);
    if (!p.seg_logits.empty()) cm.add(s.labels, argmax_labels(p.seg_logits));
    if (!p.depth.empty()) rmse_acc.add(p.depth, s.depth_raw, &s.labels);
  }

  const double inv_n = 1.0 / static_cast<double>(r.samples);
  r.loss_ss_rgb = sum_rgb * inv_n;
  r.loss_d = sum_d * inv_n;
  if (m.stage == 2) {
    r.loss_rec = sum_rec * inv_n;
    if (hx_vals.size() >= 2) {
      Tape t;
      std::vector<Var> hx, hd;
      for (Tensor& v : hx_vals) hx.push_back(t.leaf(std::move(v)));
      for (Tensor& v : hd_vals) hd.push_back(t.leaf(std::move(v)));
      r.corr = t.value(correlation(t, stack(t, hx), stack(t, hd))).item();
    }
    r.total = total_objective_value(r.loss_ss_rgb, r.loss_d, r.loss_rec,
                                    std::isnan(r.corr) ? 0.0 : r.corr, cfg.weights);
  } else {
    r.total = r.loss_ss_rgb + r.loss_d;
  }
  if (cm.scored() > 0) {
    IouReport rep = iou(cm);
    r.mean_iou = rep.mean;
    r.per_class_iou = rep.per_class;
  }
  if (rmse_acc.n > 0) r.rmse = rmse_acc.value();
  return r;
}

inline constexpr const char* kEvalCsvHeader =
    "setting,stage,views,mean_iou,per_class_iou,rmse,loss_ss_rgb,loss_d,loss_rec,corr,total";

inline void write_eval_csv(const std::filesystem::path& path, const Model& m, Views views,
                           const EvalResult& r) {
  std::ofstream os(path);
  CRL_CHECK(os, "eval csv: cannot open " << path.string() << " for writing");
  std::string per_class;
  for (std::size_t i = 0; i < r.per_class_iou.size(); ++i) {
    if (i) per_class += ";";
    per_class += std::isnan(r.per_class_iou[i]) ? "absent"
                                                : dataset_io_detail::fmt_double(
                                                      r.per_class_iou[i]);
  }
  os << kEvalCsvHeader << "\n"
     << to_string(m.config.setting) << "," << m.stage << "," << to_string(views) << ","
     << train_detail::csv_cell(r.mean_iou) << "," << per_class << ","
     << train_detail::csv_cell(r.rmse) << "," << train_detail::csv_cell(r.loss_ss_rgb)
     << "," << train_detail::csv_cell(r.loss_d) << ","
     << train_detail::csv_cell(r.loss_rec) << "," << train_detail::csv_cell(r.corr) << ","
     << train_detail::csv_cell(r.total) << "\n";
  os.close();
  CRL_CHECK(os.good(), "eval csv: write to " << path.string() << " failed");
}

}  // namespace crl
