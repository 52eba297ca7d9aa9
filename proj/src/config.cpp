#include "eqpose/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "eqpose/error.hpp"

namespace eqpose {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() {
  auto def = [&](const char* k, const char* v) { entries_.push_back({k, v, false}); };
  // model
  def("n", "8");
  def("preset", "study10");  // study10 | resnet-s
  def("kernel", "5");
  def("widths", "");  // comma list of effective widths; empty = preset default
  def("image_hw", "32");
  def("channels", "1");
  def("use_bn", "true");
  def("invariant_pool", "false");
  def("head_width", "128");
  // training
  def("batch", "16");
  def("lr", "1e-4");
  def("epochs", "30");
  def("seed", "1");
  // paths
  def("data", "");
  def("eval_data", "");
  def("checkpoint", "");
  def("resume", "");
  def("out", ".");
  // metrics
  def("acc_t_thresh", "0.2");
  def("acc_r_thresh_deg", "10");
  // scene generation
  def("scene_grid", "256");
  def("extent", "2.0");
  def("focal", "24");
  def("depth", "1");
  def("texture", "noise");  // noise | checker
  def("noise_coarse", "12");
  def("train_count", "200");
  def("test_count", "100");
  def("theta_lo", "-3.141592653589793");
  def("theta_hi", "3.141592653589793");
  def("t_range", "0.25");
  def("held_out_rotation", "false");
  def("train_arc_lo", "-2.0943951023931953");
  def("train_arc_hi", "2.0943951023931953");
  // sweep
  def("sweep_n", "1,4,8");
  def("sweep_match", "effective");  // effective channel count | unique weights
}

RunConfig::Entry* RunConfig::find(const std::string& key) {
  for (auto& e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

const RunConfig::Entry* RunConfig::find(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

const std::string& RunConfig::get(const std::string& key) const {
  const Entry* e = find(key);
  contract(e != nullptr, "config: internal lookup of unregistered key '" + key + "'");
  return e->value;
}

bool RunConfig::is_set(const std::string& key) const {
  const Entry* e = find(key);
  return e && e->assigned;
}

void RunConfig::set_kv(const std::string& key, const std::string& value) {
  Entry* e = find(key);
  if (!e) throw ConfigError("unknown config key '" + key + "'");
  e->value = value;
  e->assigned = true;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open config file");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    try {
      set_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_set_arg(const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + kv + "'");
  set_kv(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

double RunConfig::num(const std::string& key) const {
  const std::string& s = get(key);
  const char* c = s.c_str();
  char* end = nullptr;
  double v = std::strtod(c, &end);
  if (end == c || *end != '\0' || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': bad number '" + s + "'");
  return v;
}

long long RunConfig::integer(const std::string& key) const {
  double v = num(key);
  long long i = (long long)v;
  if ((double)i != v)
    throw ConfigError("config key '" + key + "': expected an integer, got '" + get(key) + "'");
  return i;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  const std::string& s = get(key);
  std::vector<int> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    std::string tok = trim(s.substr(pos, comma == std::string::npos ? std::string::npos
                                                                    : comma - pos));
    if (tok.empty())
      throw ConfigError("config key '" + key + "': empty element in list '" + s + "'");
    const char* c = tok.c_str();
    char* end = nullptr;
    long v = std::strtol(c, &end, 10);
    if (end == c || *end != '\0')
      throw ConfigError("config key '" + key + "': bad integer '" + tok + "'");
    out.push_back((int)v);
    pos = comma == std::string::npos ? s.size() : comma + 1;
  }
  return out;
}

BackboneConfig RunConfig::backbone(bool validate) const {
  BackboneConfig cfg;
  const std::string& preset = get("preset");
  if (preset == "study10")
    cfg.preset = BackbonePreset::Study10;
  else if (preset == "resnet-s")
    cfg.preset = BackbonePreset::ResnetS;
  else
    throw ConfigError("config key 'preset': expected study10 or resnet-s, got '" + preset + "'");
  cfg.group_size = (int)integer("n");
  cfg.kernel = (int)integer("kernel");
  if (!get("widths").empty()) cfg.widths = int_list("widths");
  cfg.in_channels = (int)integer("channels");
  cfg.input_hw = (int)integer("image_hw");
  cfg.use_bn = flag("use_bn");
  cfg.invariant_pool = flag("invariant_pool");
  cfg.head_width = (int)integer("head_width");
  if (validate) cfg.validate();
  return cfg;
}

GenSpec RunConfig::gen_spec() const {
  GenSpec g;
  g.image_hw = (int)integer("image_hw");
  g.scene_grid = (int)integer("scene_grid");
  g.extent = num("extent");
  g.cam = CameraIntrinsics(num("focal"), num("depth"));
  g.texture = get("texture");
  if (g.texture != "noise" && g.texture != "checker")
    throw ConfigError("config key 'texture': expected noise or checker, got '" + g.texture + "'");
  g.noise_coarse = (int)integer("noise_coarse");
  g.train_count = (int)integer("train_count");
  g.test_count = (int)integer("test_count");
  g.theta_lo = num("theta_lo");
  g.theta_hi = num("theta_hi");
  g.t_range = num("t_range");
  g.held_out_rotation = flag("held_out_rotation");
  g.train_arc_lo = num("train_arc_lo");
  g.train_arc_hi = num("train_arc_hi");
  return g;
}

TrainConfig RunConfig::train_cfg() const {
  TrainConfig tc;
  tc.batch_size = (int)integer("batch");
  tc.adam.lr = num("lr");
  return tc;
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.key, e.value);
  return out;
}

}  // namespace eqpose
