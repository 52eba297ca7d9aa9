// eqpose: dataset generation, training, evaluation, equivariance
// verification, and the group-size sweep, driven by a flat key=value config.
// Every command is a pure function of (config, seed): reruns produce
// byte-identical JSON/CSV/checkpoint payloads.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eqpose/checkpoint.hpp"
#include "eqpose/config.hpp"
#include "eqpose/eval.hpp"
#include "eqpose/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace eqpose;

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string require(const RunConfig& cfg, const std::string& key) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw ConfigError("config key '" + key + "' is required for this command");
  return v;
}

void write_text(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  f << body;
  if (!f) throw IoError(path.string() + ": write failed");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Model/optimizer seeds, per-epoch shuffle streams, and scene seeds are all
// derived from the run seed through fixed salts so a resumed run replays the
// uninterrupted one exactly.
Rng model_rng(uint64_t seed) { return Rng(seed).fork(1); }
Rng epoch_rng(uint64_t seed, long long epoch) { return Rng(seed).fork(1000 + (uint64_t)epoch); }

std::vector<PoseSample<double>> to_samples(const PoseDataset& ds, const BackboneConfig& bc) {
  if (ds.records.empty()) throw IoError(ds.root + ": dataset has no records");
  std::vector<PoseSample<double>> out;
  out.reserve(ds.records.size());
  for (size_t i = 0; i < ds.records.size(); ++i) {
    Image img = load_record_image(ds, i);
    if (img.channels != bc.in_channels || img.width != bc.input_hw ||
        img.height != bc.input_hw)
      throw ConfigError(ds.records[i].rel_path + ": image is " + std::to_string(img.width) +
                        "x" + std::to_string(img.height) + "x" + std::to_string(img.channels) +
                        " but the model expects image_hw=" + std::to_string(bc.input_hw) +
                        ", channels=" + std::to_string(bc.in_channels));
    out.push_back({image_to_tensor<double>(img), ds.records[i].pose});
  }
  return out;
}

// Position threshold for acc@thresh: explicit config value wins; otherwise
// 10% of the dataset's recorded scene extent (falling back to the default).
double resolve_t_thresh(const RunConfig& cfg, const DatasetMeta& meta) {
  if (!cfg.is_set("acc_t_thresh")) {
    const std::string* ext = meta.find("extent");
    if (ext) return 0.1 * meta.get_num("extent", 2.0);
  }
  return cfg.num("acc_t_thresh");
}

struct TrainResult {
  PoseModel<double> model;
  AdamState opt;
  long long epochs_done = 0;
  std::vector<EpochStats> curve;  // rows produced by this invocation
  std::vector<long long> curve_epochs;
};

TrainResult run_training(const RunConfig& cfg, const BackboneConfig& bc,
                         const std::vector<PoseSample<double>>& samples, bool verbose) {
  uint64_t seed = (uint64_t)cfg.integer("seed");
  Rng mr = model_rng(seed);
  TrainResult r{init_pose_model<double>(bc, mr), {}, 0, {}, {}};
  adam_init(r.opt, r.model);
  if (!cfg.get("resume").empty())
    r.epochs_done = load_checkpoint(cfg.get("resume"), r.model, r.opt);
  TrainConfig tc = cfg.train_cfg();
  long long target = cfg.integer("epochs");
  for (long long e = r.epochs_done; e < target; ++e) {
    Rng er = epoch_rng(seed, e);
    EpochStats st = train_epoch(r.model, samples, r.opt, tc, er);
    r.curve.push_back(st);
    r.curve_epochs.push_back(e + 1);
    r.epochs_done = e + 1;
    if (verbose)
      std::printf("epoch %lld/%lld  mean_loss=%.6f  s_t=%.4f  s_R=%.4f\n", e + 1, target,
                  st.mean_loss, st.s_t, st.s_r);
  }
  return r;
}

std::string curve_csv(const TrainResult& r) {
  std::string csv = "epoch,mean_loss,s_t,s_R\n";
  for (size_t i = 0; i < r.curve.size(); ++i)
    csv += std::to_string(r.curve_epochs[i]) + "," + fmt_g17(r.curve[i].mean_loss) + "," +
           fmt_g17(r.curve[i].s_t) + "," + fmt_g17(r.curve[i].s_r) + "\n";
  return csv;
}

json report_json(const EvalReport& rep, double t_thresh, double r_thresh) {
  json j;
  j["median_t_m"] = rep.median_t_m;
  j["median_r_deg"] = rep.median_r_deg;
  j["acc@thresh"] = rep.acc;
  j["t_thresh_m"] = t_thresh;
  j["r_thresh_deg"] = r_thresh;
  j["count"] = rep.per_sample.size();
  json per = json::array();
  for (const auto& e : rep.per_sample) per.push_back({{"t_m", e.t_err_m}, {"r_deg", e.r_err_deg}});
  j["per_sample"] = per;
  return j;
}

// ---------------------------------------------------------------------------
// Commands.

int cmd_synth_gen(const RunConfig& cfg) {
  if (!cfg.is_set("out"))
    throw ConfigError("config key 'out' is required for synth-gen (--out <dir>)");
  GenSpec spec = cfg.gen_spec();
  uint64_t seed = (uint64_t)cfg.integer("seed");
  PoseDataset ds = generate_dataset(spec, seed, cfg.get("out"));
  std::printf("wrote %d train + %d test records to %s\n", spec.train_count, spec.test_count,
              ds.root.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  BackboneConfig bc = cfg.backbone();
  PoseDataset ds = load_dataset(require(cfg, "data"));
  auto samples = to_samples(ds, bc);
  TrainResult r = run_training(cfg, bc, samples, /*verbose=*/true);

  fs::path out(cfg.get("out"));
  fs::create_directories(out);
  std::string ckpt =
      cfg.get("checkpoint").empty() ? (out / "model.ckpt").string() : cfg.get("checkpoint");
  save_checkpoint(ckpt, r.model, r.opt, r.epochs_done);
  write_text(out / "curve.csv", curve_csv(r));
  std::printf("trained %zu epoch(s) on %zu samples; checkpoint: %s\n", r.curve.size(),
              samples.size(), ckpt.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  BackboneConfig bc = cfg.backbone();
  std::string data = cfg.get("eval_data").empty() ? require(cfg, "data") : cfg.get("eval_data");
  PoseDataset ds = load_dataset(data);
  auto samples = to_samples(ds, bc);

  Rng mr = model_rng((uint64_t)cfg.integer("seed"));
  PoseModel<double> model = init_pose_model<double>(bc, mr);
  AdamState opt;
  adam_init(opt, model);
  load_checkpoint(require(cfg, "checkpoint"), model, opt);

  double t_thresh = resolve_t_thresh(cfg, ds.meta);
  double r_thresh = cfg.num("acc_r_thresh_deg");
  EvalReport rep = evaluate(model, samples, t_thresh, r_thresh);

  fs::path out(cfg.get("out"));
  write_json(out / "report.json", report_json(rep, t_thresh, r_thresh));
  std::printf("eval on %zu samples: median_t=%.4f m  median_r=%.3f deg  acc@(%.3g m, %g deg)=%.3f\n",
              samples.size(), rep.median_t_m, rep.median_r_deg, t_thresh, r_thresh, rep.acc);
  return 0;
}

int cmd_verify_equiv(const RunConfig& cfg) {
  BackboneConfig bc = cfg.backbone();
  Rng mr = model_rng((uint64_t)cfg.integer("seed"));
  PoseModel<double> model = init_pose_model<double>(bc, mr);
  if (!cfg.get("checkpoint").empty()) {
    AdamState opt;
    adam_init(opt, model);
    load_checkpoint(cfg.get("checkpoint"), model, opt);
  }

  // A small batch of band-limited rendered views at the model's input size.
  GenSpec spec = cfg.gen_spec();
  const int batch = 3;
  std::vector<Tensor<double>> images;
  for (int i = 0; i < batch; ++i) {
    PlanarScene scene = make_scene(spec, (uint64_t)cfg.integer("seed") + (uint64_t)i);
    Image img = render(scene, Se2Motion(0.0, {0.0, 0.0}, Frame::Scene), bc.input_hw, bc.input_hw);
    images.push_back(image_to_tensor<double>(img));
  }

  const double tol = 1e-4;  // architectural guarantee at quarter-turn multiples
  int n = bc.group_size;
  int probes = backbone_probe_count(bc);
  json rows = json::array();
  bool all_exact_pass = true;
  for (int r = 0; r < n; ++r) {
    bool exact = (4LL * r) % n == 0;  // r/n turns a multiple of a quarter turn
    json layers;
    double end_to_end = 0.0;
    for (int p = 0; p < probes; ++p) {
      double worst = 0.0;
      for (const auto& img : images) {
        auto extract = [&](const Tensor<double>& x) {
          return backbone_forward_upto<double>(nullptr, model, x, /*training=*/false, p);
        };
        worst = std::max(worst, equivariance_error<double>(extract, img, r, n, /*border=*/1));
      }
      layers[backbone_probe_name(bc, p)] = worst;
      if (p == probes - 1) end_to_end = worst;
    }
    bool pass = exact && end_to_end <= tol;
    if (exact && !pass) all_exact_pass = false;
    json row;
    row["r"] = r;
    row["angle_deg"] = 360.0 * r / n;
    row["exact_multiple"] = exact;
    row["layers"] = layers;
    row["end_to_end"] = end_to_end;
    row["pass"] = pass;
    rows.push_back(row);
    std::printf("r=%d (%.1f deg): end-to-end %.3g  %s\n", r, 360.0 * r / n, end_to_end,
                exact ? (pass ? "PASS" : "FAIL") : "reported (not a quarter-turn multiple)");
  }

  json j;
  j["n"] = n;
  j["preset"] = cfg.get("preset");
  j["tolerance"] = tol;
  j["batch"] = batch;
  j["rotations"] = rows;
  j["all_exact_pass"] = all_exact_pass;
  write_json(fs::path(cfg.get("out")) / "report.json", j);
  std::printf("%s\n", all_exact_pass ? "all quarter-turn multiples PASS"
                                     : "quarter-turn multiple FAILED");
  return 0;
}

// Widths for one sweep entry. "effective" keeps the activation width K*N
// fixed (equivariant nets then spend ~1/N unique weights); "unique" scales
// widths by ~sqrt(N) to roughly equalize unique-weight counts instead.
std::vector<int> sweep_widths(const std::vector<int>& base, int n, const std::string& match) {
  std::vector<int> w = base;
  for (int& wi : w) {
    if (match == "unique") {
      int scaled = (int)std::lround(wi * std::sqrt((double)n));
      wi = ((scaled + n - 1) / n) * n;  // round up to a multiple of the group size
    } else {
      if (wi % n != 0)
        throw ConfigError("sweep: width " + std::to_string(wi) +
                          " is not a multiple of group size " + std::to_string(n) +
                          "; pick widths divisible by every swept N");
    }
  }
  return w;
}

int cmd_sweep(const RunConfig& cfg) {
  const std::string match = cfg.get("sweep_match");
  if (match != "effective" && match != "unique")
    throw ConfigError("config key 'sweep_match': expected effective or unique, got '" + match +
                      "'");
  std::vector<int> ns = cfg.int_list("sweep_n");
  if (ns.empty()) throw ConfigError("config key 'sweep_n': empty sweep set");

  fs::path out(cfg.get("out"));
  fs::create_directories(out);
  uint64_t seed = (uint64_t)cfg.integer("seed");

  // Use the configured dataset pair, or generate a held-out-rotation set.
  std::string train_dir, test_dir;
  if (!cfg.get("data").empty()) {
    train_dir = cfg.get("data");
    test_dir = cfg.get("eval_data").empty() ? train_dir : cfg.get("eval_data");
  } else {
    GenSpec spec = cfg.gen_spec();
    spec.held_out_rotation = true;
    fs::path root = out / "sweep_data";
    if (!fs::exists(root / "poses.txt")) {
      generate_dataset(spec, seed, root.string());
      std::printf("generated %d train + %d test samples in %s\n", spec.train_count,
                  spec.test_count, root.string().c_str());
    }
    train_dir = (root / "train").string();
    test_dir = (root / "test").string();
  }

  BackboneConfig base = cfg.backbone(/*validate=*/false);  // N is substituted per entry
  PoseDataset train_ds = load_dataset(train_dir);
  PoseDataset test_ds = load_dataset(test_dir);
  double t_thresh = resolve_t_thresh(cfg, test_ds.meta);
  double r_thresh = cfg.num("acc_r_thresh_deg");

  std::string csv = "N,acc,median_t,median_r\n";
  json entries = json::array();
  for (int n : ns) {
    BackboneConfig bc = base;
    bc.group_size = n;
    bc.widths = sweep_widths(base.stage_widths(), n, match);
    bc.validate();
    auto train_samples = to_samples(train_ds, bc);
    auto test_samples = to_samples(test_ds, bc);

    TrainResult r = run_training(cfg, bc, train_samples, /*verbose=*/false);
    EvalReport rep = evaluate(r.model, test_samples, t_thresh, r_thresh);
    ParamCount pc = count_params(r.model);
    std::printf("N=%d: acc=%.3f median_t=%.4f median_r=%.3f (params %lld, backbone %lld)\n", n,
                rep.acc, rep.median_t_m, rep.median_r_deg, pc.total, pc.backbone);

    csv += std::to_string(n) + "," + fmt_g17(rep.acc) + "," + fmt_g17(rep.median_t_m) + "," +
           fmt_g17(rep.median_r_deg) + "\n";
    json e;
    e["n"] = n;
    e["acc"] = rep.acc;
    e["median_t_m"] = rep.median_t_m;
    e["median_r_deg"] = rep.median_r_deg;
    e["params_total"] = pc.total;
    e["params_backbone"] = pc.backbone;
    e["widths"] = bc.stage_widths();
    entries.push_back(e);
  }

  write_text(out / "sweep.csv", csv);
  json j;
  j["match"] = match;
  j["t_thresh_m"] = t_thresh;
  j["r_thresh_deg"] = r_thresh;
  j["train_data"] = train_dir;
  j["test_data"] = test_dir;
  j["epochs"] = cfg.integer("epochs");
  j["seed"] = cfg.integer("seed");
  j["sweep"] = entries;
  write_json(out / "report.json", j);
  return 0;
}

int cmd_convert_7scenes(const std::string& src, const std::string& dst) {
  PoseDataset ds = convert_7scenes(src, dst);
  std::printf("converted %zu records into %s\n", ds.records.size(), ds.root.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "eqpose: rotation-equivariant planar pose regression "
      "(datasets, training, evaluation, verification, sweeps)"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::string seed_str;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--seed", seed_str, "run seed (overrides config 'seed')");
  app.add_option("--out", out_dir, "output directory (overrides config 'out')");
  app.add_option("--set", sets, "key=value config override; repeatable, wins over --config");

  CLI::App* sc_gen = app.add_subcommand("synth-gen", "generate a synthetic planar dataset");
  CLI::App* sc_train = app.add_subcommand("train", "train a pose regressor");
  CLI::App* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  CLI::App* sc_verify =
      app.add_subcommand("verify-equiv", "measure per-layer and end-to-end equivariance");
  CLI::App* sc_sweep = app.add_subcommand("sweep", "train and score models across group sizes");
  CLI::App* sc_conv = app.add_subcommand("convert-7scenes", "ingest 7-Scenes-style pose frames");
  std::string conv_src, conv_dst;
  sc_conv->add_option("src", conv_src, "directory of *.pose.txt + rasters")->required();
  sc_conv->add_option("dst", conv_dst, "destination dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : sets) cfg.apply_set_arg(kv);
    if (!seed_str.empty()) cfg.set_kv("seed", seed_str);
    if (!out_dir.empty()) cfg.set_kv("out", out_dir);

    if (sc_gen->parsed()) return cmd_synth_gen(cfg);
    if (sc_train->parsed()) return cmd_train(cfg);
    if (sc_eval->parsed()) return cmd_eval(cfg);
    if (sc_verify->parsed()) return cmd_verify_equiv(cfg);
    if (sc_sweep->parsed()) return cmd_sweep(cfg);
    if (sc_conv->parsed()) return cmd_convert_7scenes(conv_src, conv_dst);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
