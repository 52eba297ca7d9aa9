#include "eqpose/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace eqpose {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& tok, const std::string& where) {
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
    throw IoError(where + ": bad number '" + tok + "'");
  return v;
}

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double DatasetMeta::get_num(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v ? parse_double(*v, "meta key '" + key + "'") : fallback;
}

void DatasetMeta::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : kv)
    if (k == key) {
      v = value;
      return;
    }
  kv.emplace_back(key, value);
}

void DatasetMeta::set_num(const std::string& key, double value) { set(key, fmt_num(value)); }

void write_poses(const std::string& dir, const std::vector<PoseRecord>& records) {
  std::string path = (fs::path(dir) / "poses.txt").string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError(path + ": cannot open for writing");
  std::fprintf(f, "# epose-v1\n");
  for (const auto& r : records)
    std::fprintf(f, "%s %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", r.rel_path.c_str(),
                 r.pose.t.x, r.pose.t.y, r.pose.t.z, r.pose.q.w, r.pose.q.x, r.pose.q.y,
                 r.pose.q.z);
  if (std::fclose(f) != 0) throw IoError(path + ": write failed");
}

void write_meta(const std::string& dir, const DatasetMeta& meta) {
  std::string path = (fs::path(dir) / "meta.txt").string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError(path + ": cannot open for writing");
  for (const auto& [k, v] : meta.kv) std::fprintf(f, "%s = %s\n", k.c_str(), v.c_str());
  if (std::fclose(f) != 0) throw IoError(path + ": write failed");
}

namespace {

DatasetMeta load_meta(const std::string& path) {
  DatasetMeta meta;
  std::ifstream in(path);
  if (!in) return meta;  // metadata is optional on load
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw IoError(path + ":" + std::to_string(ln) + ": expected 'key = value'");
    meta.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return meta;
}

}  // namespace

PoseDataset load_dataset(const std::string& dir) {
  PoseDataset ds;
  ds.root = dir;
  std::string path = (fs::path(dir) / "poses.txt").string();
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string line;
  int ln = 0;
  if (!std::getline(in, line) || trim(line) != "# epose-v1")
    throw IoError(path + ":1: missing '# epose-v1' header");
  ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::string where = path + ":" + std::to_string(ln);
    std::istringstream ss(s);
    std::vector<std::string> tok;
    std::string t;
    while (ss >> t) tok.push_back(t);
    if (tok.size() != 8)
      throw IoError(where + ": expected 'rel_path tx ty tz qw qx qy qz', got " +
                    std::to_string(tok.size()) + " fields");
    PoseRecord rec;
    rec.rel_path = tok[0];
    double v[7];
    for (int i = 0; i < 7; ++i) v[i] = parse_double(tok[(size_t)i + 1], where);
    double qn = std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]);
    if (std::abs(qn - 1.0) > 1e-6)
      throw IoError(where + ": quaternion norm " + fmt_num(qn) + " deviates from 1 beyond 1e-6");
    rec.pose.t = {v[0], v[1], v[2]};
    rec.pose.q = quat_normalized(v[3], v[4], v[5], v[6]);
    if (!fs::exists(fs::path(dir) / rec.rel_path))
      throw IoError(where + ": missing image file '" + rec.rel_path + "'");
    ds.records.push_back(std::move(rec));
  }
  ds.meta = load_meta((fs::path(dir) / "meta.txt").string());
  return ds;
}

Image load_record_image(const PoseDataset& ds, size_t index) {
  contract(index < ds.records.size(), "load_record_image: index out of range");
  return read_pnm((fs::path(ds.root) / ds.records[index].rel_path).string());
}

PoseDataset convert_7scenes(const std::string& src_dir, const std::string& dst_dir) {
  std::vector<std::string> pose_files;
  if (!fs::is_directory(src_dir)) throw IoError(src_dir + ": not a directory");
  for (const auto& e : fs::directory_iterator(src_dir)) {
    std::string name = e.path().filename().string();
    if (name.size() > 9 && name.substr(name.size() - 9) == ".pose.txt")
      pose_files.push_back(name);
  }
  std::sort(pose_files.begin(), pose_files.end());

  std::error_code ec;
  fs::create_directories(dst_dir, ec);
  if (ec) throw IoError(dst_dir + ": cannot create directory: " + ec.message());

  std::vector<PoseRecord> records;
  for (const auto& name : pose_files) {
    std::string path = (fs::path(src_dir) / name).string();
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open");
    std::vector<double> v;
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      std::istringstream ss(s);
      std::string tok;
      while (ss >> tok) v.push_back(parse_double(tok, path + ":" + std::to_string(ln)));
    }
    if (v.size() != 16)
      throw IoError(path + ": expected 16 matrix entries (row-major 4x4), got " +
                    std::to_string(v.size()));
    if (std::abs(v[12]) > 1e-9 || std::abs(v[13]) > 1e-9 || std::abs(v[14]) > 1e-9 ||
        std::abs(v[15] - 1.0) > 1e-9)
      throw IoError(path + ": last row must be 0 0 0 1");
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = v[(size_t)(4 * i + j)];
    PoseRecord rec;
    try {
      rec.pose.q = quat_from_matrix(r);
    } catch (const ContractViolation& e) {
      throw IoError(path + ": " + e.what());
    }
    rec.pose.t = {v[3], v[7], v[11]};

    std::string stem = name.substr(0, name.size() - 9);
    std::string img;
    for (const char* ext : {".pgm", ".ppm"})
      if (fs::exists(fs::path(src_dir) / (stem + ext))) {
        img = stem + ext;
        break;
      }
    if (img.empty()) throw IoError(path + ": no sibling raster (" + stem + ".pgm/.ppm)");
    fs::copy_file(fs::path(src_dir) / img, fs::path(dst_dir) / img,
                  fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError((fs::path(dst_dir) / img).string() + ": copy failed: " + ec.message());
    rec.rel_path = img;
    records.push_back(std::move(rec));
  }

  write_poses(dst_dir, records);
  DatasetMeta meta;
  meta.set("frame", "camera_to_world");
  meta.set("source", "7scenes");
  meta.set_num("count", (double)records.size());
  write_meta(dst_dir, meta);
  return load_dataset(dst_dir);
}

}  // namespace eqpose
