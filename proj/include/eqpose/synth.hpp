#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqpose/dataset.hpp"
#include "eqpose/geom.hpp"
#include "eqpose/image.hpp"
#include "eqpose/rng.hpp"

namespace eqpose {

// A textured plane at depth z0, seen by a pinhole camera that moves in the
// plane parallel to it. The texture is a square intensity grid spanning
// `extent` meters on a side, centered on the optical axis of the un-moved
// camera.
struct PlanarScene {
  int grid = 256;
  double extent = 2.0;  // meters
  CameraIntrinsics cam;
  std::vector<double> cells;  // grid*grid intensities in [0,1], row-major

  // Bilinear sample at scene coordinates (meters); outside the extent -> 0.
  double sample(double sx, double sy) const;
};

// Band-limited textures. Aliased content makes every resampling-based
// equivariance statement meaningless, so both generators keep the smallest
// feature a few image pixels wide: noise is drawn on a coarse lattice,
// upsampled, and box-smoothed; the checker composite uses smooth (tanh/
// gaussian) edges instead of steps.
PlanarScene make_noise_scene(Rng& rng, int grid, double extent, CameraIntrinsics cam,
                             int coarse = 12);
PlanarScene make_checker_scene(Rng& rng, int grid, double extent, CameraIntrinsics cam,
                               int cells = 4, int blobs = 5);

// I(x, y) = S(R(theta) * (z0/f) * (x, y) + T): the image the moved camera
// sees. Pixel coordinates are centered on ((w-1)/2, (h-1)/2).
Image render(const PlanarScene& scene, const Se2Motion& cam_motion, int width, int height);

// Image-frame motion applied to pixels: out(p) = img(R(theta) p + t) around
// the image center, bilinear, outside -> 0. Sample positions within 1e-9 of
// a pixel center snap to it, so 90-degree multiples with zero translation
// are exact permutations.
Image warp_image(const Image& img, const Se2Motion& m);

// ---------------------------------------------------------------------------
// Dataset generation.

struct GenSpec {
  int image_hw = 32;
  int scene_grid = 256;
  double extent = 2.0;          // meters
  CameraIntrinsics cam{24.0, 1.0};
  std::string texture = "noise";  // "noise" | "checker"
  int noise_coarse = 12;
  int train_count = 200;
  int test_count = 100;
  double theta_lo = -kPi;  // full pose sampling range
  double theta_hi = kPi;
  double t_range = 0.25;  // |T_X|, |T_Y| <= t_range meters
  bool held_out_rotation = false;
  // With held_out_rotation, train angles come from [train_arc_lo,
  // train_arc_hi] and test angles from its complement in the full range.
  double train_arc_lo = -2.0943951023931953;  // -120 deg
  double train_arc_hi = 2.0943951023931953;   // +120 deg
};

// The scene a given (spec, seed) pair generates; exposed so datasets can be
// regenerated and verified record-by-record.
PlanarScene make_scene(const GenSpec& spec, std::uint64_t seed);

// Deterministic camera motion stream for (spec, seed): entry i < train_count
// is a training motion, the rest are test motions.
std::vector<Se2Motion> sample_motions(const GenSpec& spec, std::uint64_t seed);

// Writes out_dir/{meta.txt,poses.txt} plus train/ and test/ subdirectories
// (each with its own poses.txt and meta.txt). Returns the combined dataset.
// Pure function of (spec, seed): regenerating gives bit-identical files.
PoseDataset generate_dataset(const GenSpec& spec, std::uint64_t seed, const std::string& out_dir);

}  // namespace eqpose
