#pragma once

// Checkpoint container: magic `EPNT1`, little-endian, u32 entry count, then
// per entry u32 name length + name bytes + u32 rank + u32 dims + f64 payload.
// A full training snapshot holds the model parameters, normalization running
// statistics, optimizer moments, and the completed-epoch counter.

#include <string>
#include <vector>

#include "eqpose/model.hpp"

namespace eqpose {

struct CheckpointEntry {
  std::string name;
  std::vector<int> dims;
  std::vector<double> data;
};

void write_entries(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_entries(const std::string& path);

namespace detail {

inline const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& es,
                                         const std::string& name, const std::string& path) {
  for (const auto& e : es)
    if (e.name == name) return e;
  throw IoError(path + ": checkpoint is missing entry '" + name + "'");
}

}  // namespace detail

// Serializes model + optimizer. `epoch` is the number of completed training
// epochs (lets a resumed run continue the same schedule).
template <typename T>
void save_checkpoint(const std::string& path, const PoseModel<T>& m, const AdamState& opt,
                     long long epoch) {
  std::vector<CheckpointEntry> es;
  auto push1 = [&](const std::string& name, double v) { es.push_back({name, {1}, {v}}); };
  const auto& cfg = m.cfg;
  push1("cfg.preset", cfg.preset == BackbonePreset::Study10 ? 0 : 1);
  push1("cfg.group_size", cfg.group_size);
  push1("cfg.kernel", cfg.kernel);
  push1("cfg.in_channels", cfg.in_channels);
  push1("cfg.input_hw", cfg.input_hw);
  push1("cfg.use_bn", cfg.use_bn ? 1 : 0);
  push1("cfg.invariant_pool", cfg.invariant_pool ? 1 : 0);
  push1("cfg.head_width", cfg.head_width);
  {
    auto w = cfg.stage_widths();
    CheckpointEntry e{"cfg.widths", {(int)w.size()}, {}};
    for (int wi : w) e.data.push_back(wi);
    es.push_back(std::move(e));
  }
  push1("train.epoch", (double)epoch);

  for_each_param(m, [&](const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e{name, t.shape, {}};
    e.data.assign(t.data(), t.data() + t.size());
    es.push_back(std::move(e));
  });
  for (size_t i = 0; i < m.bn.size(); ++i) {
    const auto& bn = m.bn[i];
    std::string base = "backbone.bn" + std::to_string(i);
    es.push_back({base + ".run_mean", {(int)bn.run_mean.size()}, bn.run_mean});
    es.push_back({base + ".run_var", {(int)bn.run_var.size()}, bn.run_var});
    es.push_back({base + ".primed", {1}, {bn.primed ? 1.0 : 0.0}});
  }
  push1("adam.step", (double)opt.step);
  size_t slot = 0;
  for_each_param(m, [&](const std::string& name, const Tensor<T>&) {
    if (slot < opt.m.size()) {
      es.push_back({"adam.m." + name, {(int)opt.m[slot].size()}, opt.m[slot]});
      es.push_back({"adam.v." + name, {(int)opt.v[slot].size()}, opt.v[slot]});
    }
    ++slot;
  });
  write_entries(path, es);
}

// Restores into a model built with a matching config; shape or config
// mismatches raise a descriptive error. Returns the completed-epoch count.
template <typename T>
long long load_checkpoint(const std::string& path, PoseModel<T>& m, AdamState& opt) {
  std::vector<CheckpointEntry> es = read_entries(path);
  auto want1 = [&](const std::string& name, double expect, const std::string& what) {
    double got = detail::find_entry(es, name, path).data.at(0);
    if (got != expect)
      throw IoError(path + ": checkpoint " + what + " is " + std::to_string(got) +
                    " but the configured model wants " + std::to_string(expect));
  };
  const auto& cfg = m.cfg;
  want1("cfg.preset", cfg.preset == BackbonePreset::Study10 ? 0 : 1, "preset");
  want1("cfg.group_size", cfg.group_size, "group size");
  want1("cfg.kernel", cfg.kernel, "kernel size");
  want1("cfg.in_channels", cfg.in_channels, "input channel count");
  want1("cfg.input_hw", cfg.input_hw, "input side");
  want1("cfg.use_bn", cfg.use_bn ? 1 : 0, "normalization flag");
  want1("cfg.invariant_pool", cfg.invariant_pool ? 1 : 0, "invariant-pool flag");
  want1("cfg.head_width", cfg.head_width, "head width");

  for_each_param(m, [&](const std::string& name, Tensor<T>& t) {
    const CheckpointEntry& e = detail::find_entry(es, name, path);
    if (e.dims != t.shape)
      throw IoError(path + ": entry '" + name + "' has shape " + shape_str(e.dims) +
                    " but the model wants " + shape_str(t.shape));
    Tensor<T> nt(t.shape);
    for (long long i = 0; i < nt.size(); ++i) nt[i] = (T)e.data[(size_t)i];
    t = nt;
  });
  for (size_t i = 0; i < m.bn.size(); ++i) {
    auto& bn = m.bn[i];
    std::string base = "backbone.bn" + std::to_string(i);
    bn.run_mean = detail::find_entry(es, base + ".run_mean", path).data;
    bn.run_var = detail::find_entry(es, base + ".run_var", path).data;
    bn.primed = detail::find_entry(es, base + ".primed", path).data.at(0) != 0.0;
  }
  opt.step = (long long)detail::find_entry(es, "adam.step", path).data.at(0);
  opt.m.clear();
  opt.v.clear();
  for_each_param(m, [&](const std::string& name, const Tensor<T>&) {
    opt.m.push_back(detail::find_entry(es, "adam.m." + name, path).data);
    opt.v.push_back(detail::find_entry(es, "adam.v." + name, path).data);
  });
  return (long long)detail::find_entry(es, "train.epoch", path).data.at(0);
}

}  // namespace eqpose
