#pragma once

// Flat key=value run configuration shared by every subcommand. Keys live in a
// fixed registry with typed defaults; anything unrecognized is an error so
// typos fail loudly instead of silently training the wrong model.

#include <string>
#include <vector>

#include "eqpose/model.hpp"
#include "eqpose/synth.hpp"

namespace eqpose {

struct RunConfig {
  RunConfig();

  // Raw access. `get` returns the default when the key was never assigned.
  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const;
  void set_kv(const std::string& key, const std::string& value);

  // `key = value` lines, # comments, blank lines ignored. Later assignments
  // win; unknown keys report file and line.
  void load_file(const std::string& path);
  void apply_set_arg(const std::string& kv);  // "key=value" from the CLI

  // Typed views; parse failures name the key.
  double num(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;  // comma-separated

  // Assembled sub-configs. The sweep builds per-N variants of the backbone
  // itself, so it defers validation until the group size is substituted.
  BackboneConfig backbone(bool validate = true) const;
  GenSpec gen_spec() const;
  TrainConfig train_cfg() const;

  // Registry order, for deterministic dumps.
  std::vector<std::pair<std::string, std::string>> items() const;

 private:
  struct Entry {
    std::string key, value;
    bool assigned = false;
  };
  std::vector<Entry> entries_;
  Entry* find(const std::string& key);
  const Entry* find(const std::string& key) const;
};

}  // namespace eqpose
