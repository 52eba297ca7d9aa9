#include "eqpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;

namespace eqpose {

double PlanarScene::sample(double sx, double sy) const {
  // scene meters -> grid coordinates; cell (grid-1)/2 sits on the axis
  double gx = (sx / extent + 0.5) * (grid - 1);
  double gy = (sy / extent + 0.5) * (grid - 1);
  int x0 = (int)std::floor(gx), y0 = (int)std::floor(gy);
  double fx = gx - x0, fy = gy - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      int x = x0 + dx, y = y0 + dy;
      if (w == 0.0 || x < 0 || x >= grid || y < 0 || y >= grid) continue;
      acc += w * cells[(size_t)y * grid + x];
    }
  return acc;
}

namespace {

void blur3(std::vector<double>& cells, int grid, int passes) {
  std::vector<double> tmp(cells.size());
  for (int p = 0; p < passes; ++p) {
    // separable 1-2-1, clamped borders
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x) {
        int xm = std::max(0, x - 1), xp = std::min(grid - 1, x + 1);
        tmp[(size_t)y * grid + x] = 0.25 * (cells[(size_t)y * grid + xm] +
                                            2 * cells[(size_t)y * grid + x] +
                                            cells[(size_t)y * grid + xp]);
      }
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x) {
        int ym = std::max(0, y - 1), yp = std::min(grid - 1, y + 1);
        cells[(size_t)y * grid + x] = 0.25 * (tmp[(size_t)ym * grid + x] +
                                              2 * tmp[(size_t)y * grid + x] +
                                              tmp[(size_t)yp * grid + x]);
      }
  }
}

void stretch01(std::vector<double>& cells) {
  double lo = cells[0], hi = cells[0];
  for (double v : cells) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) return;
  for (double& v : cells) v = (v - lo) / (hi - lo);
}

}  // namespace

PlanarScene make_noise_scene(Rng& rng, int grid, double extent, CameraIntrinsics cam, int coarse) {
  contract(grid >= 2 && coarse >= 2 && coarse <= grid, "make_noise_scene: bad grid sizes");
  contract(extent > 0, "make_noise_scene: extent must be positive");
  PlanarScene sc;
  sc.grid = grid;
  sc.extent = extent;
  sc.cam = cam;
  std::vector<double> base((size_t)coarse * coarse);
  for (double& v : base) v = rng.uniform();
  sc.cells.resize((size_t)grid * grid);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      double gx = (double)x / (grid - 1) * (coarse - 1);
      double gy = (double)y / (grid - 1) * (coarse - 1);
      int x0 = std::min((int)gx, coarse - 2), y0 = std::min((int)gy, coarse - 2);
      double fx = gx - x0, fy = gy - y0;
      sc.cells[(size_t)y * grid + x] =
          (1 - fy) * ((1 - fx) * base[(size_t)y0 * coarse + x0] +
                      fx * base[(size_t)y0 * coarse + x0 + 1]) +
          fy * ((1 - fx) * base[(size_t)(y0 + 1) * coarse + x0] +
                fx * base[(size_t)(y0 + 1) * coarse + x0 + 1]);
    }
  blur3(sc.cells, grid, 4);
  stretch01(sc.cells);
  return sc;
}

PlanarScene make_checker_scene(Rng& rng, int grid, double extent, CameraIntrinsics cam, int cells,
                               int blobs) {
  contract(grid >= 2 && cells >= 1, "make_checker_scene: bad geometry");
  contract(extent > 0, "make_checker_scene: extent must be positive");
  PlanarScene sc;
  sc.grid = grid;
  sc.extent = extent;
  sc.cam = cam;
  sc.cells.resize((size_t)grid * grid);
  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::vector<Blob> bl;
  for (int i = 0; i < blobs; ++i)
    bl.push_back({rng.uniform(-0.4, 0.4) * extent, rng.uniform(-0.4, 0.4) * extent,
                  rng.uniform(0.06, 0.12) * extent, rng.uniform(-0.45, 0.45)});
  double freq = kPi * cells / extent;
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      double sx = ((double)x / (grid - 1) - 0.5) * extent;
      double sy = ((double)y / (grid - 1) - 0.5) * extent;
      double v = 0.5 + 0.35 * std::tanh(2.5 * std::sin(freq * sx) * std::sin(freq * sy));
      for (const Blob& b : bl) {
        double dx = sx - b.cx, dy = sy - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
      }
      sc.cells[(size_t)y * grid + x] = std::clamp(v, 0.0, 1.0);
    }
  blur3(sc.cells, grid, 2);
  return sc;
}

Image render(const PlanarScene& scene, const Se2Motion& cam_motion, int width, int height) {
  contract(cam_motion.frame == Frame::Scene, "render: camera motion must be scene-frame");
  contract(width >= 1 && height >= 1, "render: bad resolution");
  auto r = cam_motion.rotation();  // [c, -s, s, c]
  double k = scene.cam.z0 / scene.cam.f;
  double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  Image img(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double px = (x - cx) * k, py = (y - cy) * k;
      double sx = r[0] * px + r[1] * py + cam_motion.t.x;
      double sy = r[2] * px + r[3] * py + cam_motion.t.y;
      img.at(x, y) = scene.sample(sx, sy);
    }
  return img;
}

Image warp_image(const Image& img, const Se2Motion& m) {
  contract(m.frame == Frame::Image, "warp_image: motion must be image-frame");
  auto r = m.rotation();
  double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double sx = r[0] * (x - cx) + r[1] * (y - cy) + m.t.x + cx;
      double sy = r[2] * (x - cx) + r[3] * (y - cy) + m.t.y + cy;
      // snap near-integer positions so quarter turns permute exactly
      if (std::abs(sx - std::round(sx)) < 1e-9) sx = std::round(sx);
      if (std::abs(sy - std::round(sy)) < 1e-9) sy = std::round(sy);
      int x0 = (int)std::floor(sx), y0 = (int)std::floor(sy);
      double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            int xs = x0 + dx, ys = y0 + dy;
            if (w == 0.0 || xs < 0 || xs >= img.width || ys < 0 || ys >= img.height) continue;
            acc += w * img.at(xs, ys, c);
          }
        out.at(x, y, c) = acc;
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Generation.

PlanarScene make_scene(const GenSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Rng scene_rng = rng.fork(1);
  if (spec.texture == "noise")
    return make_noise_scene(scene_rng, spec.scene_grid, spec.extent, spec.cam, spec.noise_coarse);
  if (spec.texture == "checker")
    return make_checker_scene(scene_rng, spec.scene_grid, spec.extent, spec.cam);
  throw ContractViolation("make_scene: unknown texture '" + spec.texture + "'");
}

std::vector<Se2Motion> sample_motions(const GenSpec& spec, std::uint64_t seed) {
  contract(spec.train_count >= 0 && spec.test_count >= 0, "sample_motions: negative count");
  contract(spec.theta_hi > spec.theta_lo, "sample_motions: empty angle range");
  contract(spec.t_range >= 0, "sample_motions: negative translation range");
  double arc_lo = std::max(spec.train_arc_lo, spec.theta_lo);
  double arc_hi = std::min(spec.train_arc_hi, spec.theta_hi);
  if (spec.held_out_rotation) {
    contract(arc_hi > arc_lo, "sample_motions: held-out arc is empty");
    contract((arc_hi - arc_lo) < (spec.theta_hi - spec.theta_lo) - 1e-9,
             "sample_motions: held-out arc leaves no test angles");
  }
  Rng rng(seed);
  Rng pose_rng = rng.fork(2);
  std::vector<Se2Motion> out;
  out.reserve((size_t)(spec.train_count + spec.test_count));
  for (int i = 0; i < spec.train_count + spec.test_count; ++i) {
    bool train = i < spec.train_count;
    double theta;
    if (!spec.held_out_rotation) {
      theta = pose_rng.uniform(spec.theta_lo, spec.theta_hi);
    } else if (train) {
      theta = pose_rng.uniform(arc_lo, arc_hi);
    } else {
      do {
        theta = pose_rng.uniform(spec.theta_lo, spec.theta_hi);
      } while (theta >= arc_lo && theta <= arc_hi);
    }
    double tx = pose_rng.uniform(-spec.t_range, spec.t_range);
    double ty = pose_rng.uniform(-spec.t_range, spec.t_range);
    out.emplace_back(theta, Vec2{tx, ty}, Frame::Scene);
  }
  return out;
}

namespace {

DatasetMeta base_meta(const GenSpec& spec, std::uint64_t seed) {
  DatasetMeta m;
  m.set("frame", "camera_to_world");
  m.set_num("image_hw", spec.image_hw);
  m.set_num("scene_grid", spec.scene_grid);
  m.set_num("extent", spec.extent);
  m.set_num("f", spec.cam.f);
  m.set_num("z0", spec.cam.z0);
  m.set("texture", spec.texture);
  m.set_num("noise_coarse", spec.noise_coarse);
  m.set_num("seed", (double)seed);
  m.set_num("theta_lo", spec.theta_lo);
  m.set_num("theta_hi", spec.theta_hi);
  m.set_num("t_range", spec.t_range);
  m.set_num("held_out_rotation", spec.held_out_rotation ? 1 : 0);
  m.set_num("train_arc_lo", spec.train_arc_lo);
  m.set_num("train_arc_hi", spec.train_arc_hi);
  m.set_num("train_count", spec.train_count);
  m.set_num("test_count", spec.test_count);
  return m;
}

}  // namespace

PoseDataset generate_dataset(const GenSpec& spec, std::uint64_t seed, const std::string& out_dir) {
  contract(spec.image_hw >= 1, "generate_dataset: bad image size");
  PlanarScene scene = make_scene(spec, seed);
  std::vector<Se2Motion> motions = sample_motions(spec, seed);

  std::error_code ec;
  for (const char* sub : {"", "train", "test"}) {
    fs::create_directories(fs::path(out_dir) / sub, ec);
    if (ec)
      throw IoError((fs::path(out_dir) / sub).string() + ": cannot create directory: " +
                    ec.message());
  }

  PoseDataset all;
  all.root = out_dir;
  std::vector<PoseRecord> split_records[2];
  for (size_t i = 0; i < motions.size(); ++i) {
    bool train = (int)i < spec.train_count;
    int local = train ? (int)i : (int)i - spec.train_count;
    const Se2Motion& m = motions[i];
    Image img = render(scene, m, spec.image_hw, spec.image_hw);
    char name[32];
    std::snprintf(name, sizeof name, "img%05d.pgm", local);
    std::string split = train ? "train" : "test";
    write_pnm(img, (fs::path(out_dir) / split / name).string());
    PoseRecord rec;
    rec.rel_path = name;
    rec.pose = Se3Pose({m.t.x, m.t.y, 0.0}, quat_about_z(m.theta));
    split_records[train ? 0 : 1].push_back(rec);
    rec.rel_path = split + "/" + name;
    all.records.push_back(rec);
  }

  for (int s = 0; s < 2; ++s) {
    std::string dir = (fs::path(out_dir) / (s == 0 ? "train" : "test")).string();
    write_poses(dir, split_records[(size_t)s]);
    DatasetMeta m = base_meta(spec, seed);
    m.set("split", s == 0 ? "train" : "test");
    m.set_num("count", (double)split_records[(size_t)s].size());
    write_meta(dir, m);
  }
  write_poses(out_dir, all.records);
  DatasetMeta m = base_meta(spec, seed);
  m.set("split", "all");
  m.set_num("count", (double)all.records.size());
  write_meta(out_dir, m);
  all.meta = m;
  return all;
}

}  // namespace eqpose
