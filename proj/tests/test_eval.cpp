#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "eqpose/checkpoint.hpp"
#include "eqpose/config.hpp"
#include "eqpose/eval.hpp"
#include "eqpose/synth.hpp"

using namespace eqpose;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("eqpose_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

BackboneConfig tiny_cfg(int n) {
  BackboneConfig cfg;
  cfg.preset = BackbonePreset::ResnetS;
  cfg.group_size = n;
  cfg.kernel = 3;
  cfg.widths = {n, 2 * n};
  cfg.input_hw = 16;
  cfg.head_width = 8;
  return cfg;
}

std::vector<PoseSample<double>> tiny_data(int count, int hw, Rng& rng) {
  std::vector<PoseSample<double>> data;
  for (int i = 0; i < count; ++i) {
    Tensor<double> img({1, hw, hw});
    for (long long k = 0; k < img.size(); ++k) img[k] = rng.uniform();
    Quat q = quat_normalized(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    data.push_back({img, Se3Pose({rng.uniform(), rng.uniform(), 0.0}, q)});
  }
  return data;
}

}  // namespace

TEST_CASE("median: odd, even, singleton, empty") {
  CHECK(median({1.0, 2.0, 9.0}) == 2.0);          // order statistics, not mean
  CHECK(median({9.0, 1.0, 2.0}) == 2.0);          // input order must not matter
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);     // even -> mean of central pair
  CHECK(median({7.5}) == 7.5);
  CHECK(median({2.0, 2.0, 2.0, 100.0}) == 2.0);   // robust to one outlier
  CHECK_THROWS_AS((void)median({}), ContractViolation);
}

TEST_CASE("pose_error: zero for identical poses, hemisphere-corrected angle") {
  Se3Pose a({1.0, 2.0, 3.0}, Quat{0.5, 0.5, 0.5, 0.5});
  SampleError e = pose_error(a, a);
  CHECK(e.t_err_m == 0.0);
  CHECK(e.r_err_deg == doctest::Approx(0.0).epsilon(1e-12));

  // Flipping the sign of one quaternion encodes the same rotation.
  Se3Pose b = a;
  b.q = Quat{-a.q.w, -a.q.x, -a.q.y, -a.q.z};
  CHECK(pose_error(a, b).r_err_deg == doctest::Approx(0.0).epsilon(1e-9));

  // 90-degree roll about z, 3-4-0 translation offset.
  double s = std::sqrt(0.5);
  Se3Pose c({4.0, 6.0, 3.0}, Quat{s, 0.0, 0.0, s});
  Se3Pose gt({1.0, 2.0, 3.0}, Quat{1.0, 0.0, 0.0, 0.0});
  SampleError ec = pose_error(c, gt);
  CHECK(ec.t_err_m == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(ec.r_err_deg == doctest::Approx(90.0).epsilon(1e-9));
}

TEST_CASE("summarize_errors: medians and conjunctive accuracy by hand") {
  std::vector<SampleError> errs = {
      {0.05, 2.0},   // hit
      {0.30, 2.0},   // miss: position
      {0.05, 30.0},  // miss: angle
      {0.30, 30.0},  // miss: both
      {0.09, 9.9},   // hit (strictly below both thresholds)
  };
  EvalReport rep = summarize_errors(errs, 0.1, 10.0);
  CHECK(rep.acc == doctest::Approx(2.0 / 5.0).epsilon(1e-12));
  CHECK(rep.median_t_m == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(rep.median_r_deg == doctest::Approx(9.9).epsilon(1e-12));
  CHECK(rep.per_sample.size() == 5);

  // Threshold equality is a miss, not a hit.
  EvalReport eq = summarize_errors({{0.1, 5.0}}, 0.1, 10.0);
  CHECK(eq.acc == 0.0);
  EvalReport eq2 = summarize_errors({{0.05, 10.0}}, 0.1, 10.0);
  CHECK(eq2.acc == 0.0);
}

TEST_CASE("evaluate: report medians equal independent recomputation from per_sample") {
  Rng rng(404);
  auto cfg = tiny_cfg(4);
  auto m = init_pose_model<double>(cfg, rng);
  auto data = tiny_data(9, cfg.input_hw, rng);
  EvalReport rep = evaluate(m, data, 0.25, 45.0);
  REQUIRE(rep.per_sample.size() == data.size());

  std::vector<double> ts, rs;
  long long hits = 0;
  for (const auto& e : rep.per_sample) {
    ts.push_back(e.t_err_m);
    rs.push_back(e.r_err_deg);
    CHECK(e.r_err_deg >= 0.0);
    CHECK(e.r_err_deg <= 180.0);
    if (e.t_err_m < 0.25 && e.r_err_deg < 45.0) ++hits;
  }
  CHECK(rep.median_t_m == doctest::Approx(median(ts)).epsilon(1e-12));
  CHECK(rep.median_r_deg == doctest::Approx(median(rs)).epsilon(1e-12));
  CHECK(rep.acc == doctest::Approx((double)hits / (double)data.size()).epsilon(1e-12));

  // Evaluation must not mutate the model: run twice, same numbers.
  EvalReport rep2 = evaluate(m, data, 0.25, 45.0);
  CHECK(rep2.median_t_m == rep.median_t_m);
  CHECK(rep2.median_r_deg == rep.median_r_deg);
}

TEST_CASE("evaluate: perfect predictor scores zero medians and full accuracy") {
  // Constant heads (zeroed input weights) make every prediction equal; point
  // every label at that constant prediction and the metrics collapse to zero.
  Rng rng(77);
  auto cfg = tiny_cfg(2);
  auto m = init_pose_model<double>(cfg, rng);
  for (auto* h : {&m.head_t, &m.head_q}) {
    for (long long i = 0; i < h->p.size(); ++i) h->p[i] = 0.0;
    for (long long i = 0; i < h->pb.size(); ++i) h->pb[i] = 0.0;
  }
  m.head_t.pb[0] = 0.25;
  m.head_t.pb[1] = -0.5;
  m.head_t.pb[2] = 2.0;
  m.head_q.pb[0] = 1.0;  // identity quaternion

  auto data = tiny_data(4, cfg.input_hw, rng);
  for (auto& s : data) s.pose = Se3Pose({0.25, -0.5, 2.0}, Quat{1.0, 0.0, 0.0, 0.0});
  EvalReport rep = evaluate(m, data, 0.1, 10.0);
  CHECK(rep.median_t_m == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.median_r_deg == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(rep.acc == 1.0);
}

TEST_CASE("checkpoint: entry container roundtrips bitwise and rejects damage") {
  fs::path dir = fresh_dir("entries");
  fs::path path = dir / "x.ckpt";
  std::vector<CheckpointEntry> es = {
      {"alpha", {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-300, -0.0}},
      {"beta.gamma", {1}, {42.0}},
  };
  write_entries(path.string(), es);
  auto back = read_entries(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "alpha");
  CHECK(back[0].dims == std::vector<int>{2, 3});
  CHECK(std::memcmp(back[0].data.data(), es[0].data.data(), 6 * sizeof(double)) == 0);
  CHECK(back[1].name == "beta.gamma");
  CHECK(back[1].data[0] == 42.0);

  // Same entries written twice -> identical bytes on disk.
  fs::path path2 = dir / "y.ckpt";
  write_entries(path2.string(), es);
  CHECK(file_bytes(path) == file_bytes(path2));

  // Truncation and bad magic are loud.
  std::string bytes = file_bytes(path);
  {
    std::ofstream f(dir / "trunc.ckpt", std::ios::binary);
    f.write(bytes.data(), (std::streamsize)bytes.size() - 5);
  }
  CHECK_THROWS_WITH_AS(read_entries((dir / "trunc.ckpt").string()),
                       doctest::Contains("truncated"), IoError);
  {
    std::ofstream f(dir / "magic.ckpt", std::ios::binary);
    f << "NOPE!" << bytes.substr(5);
  }
  CHECK_THROWS_WITH_AS(read_entries((dir / "magic.ckpt").string()),
                       doctest::Contains("bad magic"), IoError);
  {
    std::ofstream f(dir / "tail.ckpt", std::ios::binary);
    f << bytes << "zz";
  }
  CHECK_THROWS_WITH_AS(read_entries((dir / "tail.ckpt").string()),
                       doctest::Contains("trailing bytes"), IoError);
  CHECK_THROWS_AS(read_entries((dir / "missing.ckpt").string()), IoError);
}

TEST_CASE("checkpoint: model + optimizer roundtrip is bitwise, resume continues the run") {
  fs::path dir = fresh_dir("model_ckpt");
  Rng rng(5150);
  auto cfg = tiny_cfg(4);
  auto m = init_pose_model<double>(cfg, rng);
  auto data = tiny_data(6, cfg.input_hw, rng);

  TrainConfig tc;
  tc.batch_size = 3;
  tc.adam.lr = 1e-3;
  AdamState opt;
  adam_init(opt, m);
  // Per-epoch streams are re-derived from the run seed (fork advances its
  // parent, so both runs must build them from a fresh parent).
  uint64_t run_seed = 5150;
  Rng e0 = Rng(run_seed).fork(1000);
  train_epoch(m, data, opt, tc, e0);

  fs::path ck = dir / "after1.ckpt";
  save_checkpoint(ck.string(), m, opt, 1);

  // Load into a fresh model: every parameter, running stat, and moment equal.
  Rng rng2(999);
  auto m2 = init_pose_model<double>(cfg, rng2);
  AdamState opt2;
  long long epoch = load_checkpoint(ck.string(), m2, opt2);
  CHECK(epoch == 1);
  for_each_param(m, [&](const std::string& name, const Tensor<double>& t) {
    bool matched = false;
    for_each_param(m2, [&](const std::string& name2, const Tensor<double>& t2) {
      if (name2 != name) return;
      matched = true;
      REQUIRE(t2.shape == t.shape);
      CHECK(std::memcmp(t2.data(), t.data(), (size_t)t.size() * sizeof(double)) == 0);
    });
    CHECK(matched);
  });
  REQUIRE(m2.bn.size() == m.bn.size());
  for (size_t i = 0; i < m.bn.size(); ++i) {
    CHECK(m2.bn[i].run_mean == m.bn[i].run_mean);
    CHECK(m2.bn[i].run_var == m.bn[i].run_var);
    CHECK(m2.bn[i].primed == m.bn[i].primed);
  }
  CHECK(opt2.step == opt.step);
  REQUIRE(opt2.m.size() == opt.m.size());
  for (size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(opt2.m[i] == opt.m[i]);
    CHECK(opt2.v[i] == opt.v[i]);
  }

  // Resuming from the checkpoint replays the original run exactly: epoch 2 on
  // the loaded state matches epoch 2 on the uninterrupted state.
  Rng e1a = Rng(run_seed).fork(1001);
  train_epoch(m, data, opt, tc, e1a);
  Rng e1b = Rng(run_seed).fork(1001);
  train_epoch(m2, data, opt2, tc, e1b);
  for_each_param(m, [&](const std::string& name, const Tensor<double>& t) {
    for_each_param(m2, [&](const std::string& name2, const Tensor<double>& t2) {
      if (name2 != name) return;
      CHECK(std::memcmp(t2.data(), t.data(), (size_t)t.size() * sizeof(double)) == 0);
    });
  });

  // Mismatched architecture is refused with the offending field named.
  auto cfg_other = tiny_cfg(2);
  Rng rng3(1);
  auto m3 = init_pose_model<double>(cfg_other, rng3);
  AdamState opt3;
  CHECK_THROWS_WITH_AS(load_checkpoint(ck.string(), m3, opt3),
                       doctest::Contains("group size"), IoError);
}

TEST_CASE("config: defaults, file parsing, overrides, unknown keys") {
  RunConfig cfg;
  CHECK(cfg.integer("n") == 8);
  CHECK(cfg.get("preset") == "study10");
  CHECK(cfg.num("lr") == doctest::Approx(1e-4));
  CHECK(cfg.flag("use_bn"));
  CHECK_FALSE(cfg.is_set("n"));

  fs::path dir = fresh_dir("config");
  fs::path file = dir / "run.cfg";
  {
    std::ofstream f(file);
    f << "# comment line\n";
    f << "n = 4\n";
    f << "lr=0.01   # trailing comment\n";
    f << "\n";
    f << "preset = resnet-s\n";
    f << "widths = 8,16\n";
  }
  cfg.load_file(file.string());
  CHECK(cfg.integer("n") == 4);
  CHECK(cfg.num("lr") == doctest::Approx(0.01));
  CHECK(cfg.is_set("n"));
  CHECK(cfg.int_list("widths") == std::vector<int>{8, 16});

  // Later assignment wins (CLI --set on top of the file).
  cfg.apply_set_arg("n=2");
  CHECK(cfg.integer("n") == 2);

  // Unknown keys are refused and named, wherever they come from.
  CHECK_THROWS_WITH_AS(cfg.apply_set_arg("przset=resnet-s"),
                       doctest::Contains("przset"), ConfigError);
  {
    std::ofstream f(file);
    f << "epochs = 3\nbogus_key = 1\n";
  }
  CHECK_THROWS_WITH_AS(cfg.load_file(file.string()), doctest::Contains("bogus_key"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(cfg.load_file(file.string()), doctest::Contains(":2:"), ConfigError);

  // Typed accessors validate their parses.
  cfg.apply_set_arg("lr=fast");
  CHECK_THROWS_WITH_AS((void)cfg.num("lr"), doctest::Contains("lr"), ConfigError);
  cfg.apply_set_arg("epochs=2.5");
  CHECK_THROWS_WITH_AS((void)cfg.integer("epochs"), doctest::Contains("integer"), ConfigError);
  cfg.apply_set_arg("use_bn=maybe");
  CHECK_THROWS_WITH_AS((void)cfg.flag("use_bn"), doctest::Contains("boolean"), ConfigError);
}

TEST_CASE("config: assembled sub-configs carry the keys through") {
  RunConfig cfg;
  cfg.apply_set_arg("preset=resnet-s");
  cfg.apply_set_arg("n=2");
  cfg.apply_set_arg("widths=8,16");
  cfg.apply_set_arg("kernel=3");
  cfg.apply_set_arg("image_hw=16");
  cfg.apply_set_arg("invariant_pool=true");
  cfg.apply_set_arg("head_width=12");
  BackboneConfig b = cfg.backbone();
  CHECK(b.preset == BackbonePreset::ResnetS);
  CHECK(b.group_size == 2);
  CHECK(b.stage_widths() == std::vector<int>{8, 16});
  CHECK(b.kernel == 3);
  CHECK(b.input_hw == 16);
  CHECK(b.invariant_pool);
  CHECK(b.head_width == 12);

  cfg.apply_set_arg("extent=3.5");
  cfg.apply_set_arg("texture=checker");
  cfg.apply_set_arg("held_out_rotation=true");
  cfg.apply_set_arg("train_count=12");
  GenSpec g = cfg.gen_spec();
  CHECK(g.image_hw == 16);
  CHECK(g.extent == doctest::Approx(3.5));
  CHECK(g.texture == "checker");
  CHECK(g.held_out_rotation);
  CHECK(g.train_count == 12);
  CHECK(g.cam.f == doctest::Approx(24.0));

  cfg.apply_set_arg("batch=5");
  cfg.apply_set_arg("lr=0.25");
  TrainConfig t = cfg.train_cfg();
  CHECK(t.batch_size == 5);
  CHECK(t.adam.lr == doctest::Approx(0.25));

  // Invalid width/group combinations surface through validate().
  cfg.apply_set_arg("widths=7,16");
  CHECK_THROWS_AS((void)cfg.backbone(), ContractViolation);
  cfg.apply_set_arg("texture=marble");
  CHECK_THROWS_WITH_AS((void)cfg.gen_spec(), doctest::Contains("texture"), ConfigError);
}
