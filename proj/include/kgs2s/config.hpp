#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgs2s/common.hpp"
#include "kgs2s/graph.hpp"

namespace kgs2s {

// One flat config file drives every subcommand, so a run is reproducible
// from a single artifact. Line-oriented `key = value`, '#' comments, later
// keys override earlier ones.
struct RunConfig {
  std::string data_dir;  // required
  std::string out_dir;   // required
  MetaKind meta_kind = MetaKind::None;

  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int max_len = 128;
  double seq2seq_dropout_p = 0.1;

  int batch_size = 32;
  double lr = 1e-3;
  int desc_len = 40;
  int max_epochs = 50;
  int eval_every = 5;
  int beam_width_for_valid = 10;

  int beam_width = 40;
  bool constrained = true;
  std::string block_split_union = "all";  // all | train | train_valid
  std::vector<int> metrics_n{1, 3, 10};
  int threads = 1;
  std::uint64_t seed = 42;

  SplitMask block_splits() const {
    if (block_split_union == "all") return SplitMask::all();
    if (block_split_union == "train") return SplitMask::train_only();
    if (block_split_union == "train_valid") return {true, true, false};
    fail("bad block_split_union '" + block_split_union + "'");
  }
};

namespace detail_config {

inline long long parse_ll(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    fail("config key '" + key + "': expected integer, got '" + value + "'");
  }
  if (pos != value.size()) fail("config key '" + key + "': expected integer, got '" + value + "'");
  return v;
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    fail("config key '" + key + "': expected number, got '" + value + "'");
  }
  if (pos != value.size()) fail("config key '" + key + "': expected number, got '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline MetaKind parse_meta_kind(const std::string& key, const std::string& value) {
  if (value == "none") return MetaKind::None;
  if (value == "timestamp") return MetaKind::Timestamp;
  if (value == "typing") return MetaKind::Typing;
  fail("config key '" + key + "': expected none/timestamp/typing, got '" + value + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& part : split_on(value, ',')) {
    const std::string p = trim(part);
    if (p.empty()) fail("config key '" + key + "': empty list element");
    out.push_back(static_cast<int>(parse_ll(key, p)));
  }
  if (out.empty()) fail("config key '" + key + "': empty list");
  return out;
}

}  // namespace detail_config

inline void apply_config_line(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail_config;
  if (key == "data_dir") c.data_dir = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "meta_kind") c.meta_kind = parse_meta_kind(key, value);
  else if (key == "d_model") c.d_model = static_cast<int>(parse_ll(key, value));
  else if (key == "n_heads") c.n_heads = static_cast<int>(parse_ll(key, value));
  else if (key == "n_enc_layers") c.n_enc_layers = static_cast<int>(parse_ll(key, value));
  else if (key == "n_dec_layers") c.n_dec_layers = static_cast<int>(parse_ll(key, value));
  else if (key == "d_ff") c.d_ff = static_cast<int>(parse_ll(key, value));
  else if (key == "max_len") c.max_len = static_cast<int>(parse_ll(key, value));
  else if (key == "seq2seq_dropout_p") c.seq2seq_dropout_p = parse_double(key, value);
  else if (key == "batch_size") c.batch_size = static_cast<int>(parse_ll(key, value));
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "desc_len") c.desc_len = static_cast<int>(parse_ll(key, value));
  else if (key == "max_epochs") c.max_epochs = static_cast<int>(parse_ll(key, value));
  else if (key == "eval_every") c.eval_every = static_cast<int>(parse_ll(key, value));
  else if (key == "beam_width_for_valid")
    c.beam_width_for_valid = static_cast<int>(parse_ll(key, value));
  else if (key == "beam_width") c.beam_width = static_cast<int>(parse_ll(key, value));
  else if (key == "constrained") c.constrained = parse_bool(key, value);
  else if (key == "block_split_union") {
    if (value != "all" && value != "train" && value != "train_valid")
      fail("config key 'block_split_union': expected all/train/train_valid, got '" + value + "'");
    c.block_split_union = value;
  } else if (key == "metrics_n") c.metrics_n = parse_int_list(key, value);
  else if (key == "threads") c.threads = static_cast<int>(parse_ll(key, value));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_ll(key, value));
  else fail("unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("missing file: " + path.string());
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      fail("config " + path.string() + " line " + std::to_string(lineno) +
           ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) fail("config " + path.string() + " line " + std::to_string(lineno) +
                          ": empty key");
    apply_config_line(c, key, value);
  }
  if (c.data_dir.empty()) fail("config " + path.string() + ": missing required key data_dir");
  if (c.out_dir.empty()) fail("config " + path.string() + ": missing required key out_dir");
  return c;
}

}  // namespace kgs2s
