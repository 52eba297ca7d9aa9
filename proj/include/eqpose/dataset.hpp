#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eqpose/geom.hpp"
#include "eqpose/image.hpp"
#include "eqpose/tensor.hpp"

namespace eqpose {

// Flat ordered `key = value` metadata (meta.txt). Order is preserved so a
// regenerated dataset is byte-identical.
struct DatasetMeta {
  std::vector<std::pair<std::string, std::string>> kv;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : kv)
      if (k == key) return &v;
    return nullptr;
  }
  std::string get(const std::string& key, const std::string& fallback = "") const {
    const std::string* v = find(key);
    return v ? *v : fallback;
  }
  double get_num(const std::string& key, double fallback) const;
  void set(const std::string& key, const std::string& value);
  void set_num(const std::string& key, double value);
};

struct PoseRecord {
  std::string rel_path;  // image file, relative to the dataset root
  Se3Pose pose;          // camera-to-world
};

struct PoseDataset {
  std::string root;
  std::vector<PoseRecord> records;
  DatasetMeta meta;
};

// poses.txt: header line `# epose-v1`, then one record per line:
// `rel_path tx ty tz qw qx qy qz` (17 significant digits). `#` lines after
// the header are comments.
void write_poses(const std::string& dir, const std::vector<PoseRecord>& records);
void write_meta(const std::string& dir, const DatasetMeta& meta);

// Loads and validates a dataset directory: format header, 8 fields per
// record, unit quaternions within 1e-6 (canonicalized on load), and every
// image file present. Errors name the offending file and line.
PoseDataset load_dataset(const std::string& dir);

Image load_record_image(const PoseDataset& ds, size_t index);

// Ingests a directory of 7-Scenes-style frames: for every `*.pose.txt`
// (16 whitespace-separated floats, row-major 4x4 camera-to-world matrix)
// there must be a sibling `.pgm`/`.ppm` raster. Writes a canonical dataset
// into dst and returns it loaded.
PoseDataset convert_7scenes(const std::string& src_dir, const std::string& dst_dir);

// [C,H,W] tensor in [0,1] for feeding the model.
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t[((long long)c * img.height + y) * img.width + x] = (T)img.at(x, y, c);
  return t;
}

}  // namespace eqpose
