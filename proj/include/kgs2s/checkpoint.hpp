#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kgs2s/adam.hpp"
#include "kgs2s/model.hpp"
#include "kgs2s/vocab.hpp"

namespace kgs2s {

struct Checkpoint {
  ModelConfig config;
  std::uint64_t vocab_digest = 0;
  Seq2SeqParams params;
  OptimState opt;
  std::int64_t epochs_done = 0;
};

namespace detail_ckpt {

constexpr const char* kMagic = "kgs2s-ckpt v1";
constexpr const char* kEndHeader = "end-header";
constexpr const char* kTrailer = "kgs2s-ckpt-end";

inline void write_array(std::ostream& out, const Mat& m) {
  const std::uint64_t n = m.a.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(m.a.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_array(std::istream& in, Mat& m, const std::string& name,
                       const std::filesystem::path& path) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in) fail("truncated checkpoint " + path.string() + " at array " + name);
  if (n != m.a.size())
    fail("checkpoint " + path.string() + ": array " + name + " has length " +
         std::to_string(n) + ", expected " + std::to_string(m.a.size()));
  in.read(reinterpret_cast<char*>(m.a.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail("truncated checkpoint " + path.string() + " at array " + name);
}

inline std::string header_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) fail("truncated checkpoint " + path.string());
  return line;
}

}  // namespace detail_ckpt

// Binary container: a version tag, a key=value config block, the vocabulary
// digest, then every array (parameters, Adam first/second moments) as
// length-prefixed little-endian doubles in param_count enumeration order.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  out.precision(17);  // doubles in the header must round-trip exactly
  const ModelConfig& c = ckpt.config;
  out << detail_ckpt::kMagic << '\n'
      << "d_model=" << c.d_model << '\n'
      << "n_heads=" << c.n_heads << '\n'
      << "n_enc_layers=" << c.n_enc_layers << '\n'
      << "n_dec_layers=" << c.n_dec_layers << '\n'
      << "d_ff=" << c.d_ff << '\n'
      << "max_len=" << c.max_len << '\n'
      << "vocab_size=" << c.vocab_size << '\n'
      << "n_relations=" << c.n_relations << '\n'
      << "seq2seq_dropout_p=" << c.seq2seq_dropout_p << '\n'
      << "seed=" << c.seed << '\n'
      << "vocab_digest=" << ckpt.vocab_digest << '\n'
      << "epochs_done=" << ckpt.epochs_done << '\n'
      << "adam_step=" << ckpt.opt.step << '\n'
      << "adam_lr=" << ckpt.opt.cfg.lr << '\n'
      << "adam_beta1=" << ckpt.opt.cfg.beta1 << '\n'
      << "adam_beta2=" << ckpt.opt.cfg.beta2 << '\n'
      << "adam_eps=" << ckpt.opt.cfg.eps << '\n'
      << detail_ckpt::kEndHeader << '\n';

  for (const ConstParamRef& ref : param_entries(ckpt.params))
    detail_ckpt::write_array(out, *ref.mat);
  for (const ConstParamRef& ref : param_entries(ckpt.opt.m))
    detail_ckpt::write_array(out, *ref.mat);
  for (const ConstParamRef& ref : param_entries(ckpt.opt.v))
    detail_ckpt::write_array(out, *ref.mat);
  out << detail_ckpt::kTrailer;
  if (!out) fail("write failure on " + path.string());
}

// Loads and validates a checkpoint. When a vocabulary is supplied its digest
// must match the stored one.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const Vocab* expect_vocab = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("missing file: " + path.string());

  if (detail_ckpt::header_line(in, path) != detail_ckpt::kMagic)
    fail("checkpoint " + path.string() + ": version mismatch (expected '" +
         std::string(detail_ckpt::kMagic) + "')");

  ModelConfig cfg;
  std::uint64_t digest = 0;
  std::int64_t epochs_done = 0;
  AdamConfig adam_cfg;
  std::int64_t adam_step_count = 0;
  for (;;) {
    std::string line = detail_ckpt::header_line(in, path);
    if (line == detail_ckpt::kEndHeader) break;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail("checkpoint " + path.string() + ": bad header line");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    std::istringstream vs(value);
    if (key == "d_model") vs >> cfg.d_model;
    else if (key == "n_heads") vs >> cfg.n_heads;
    else if (key == "n_enc_layers") vs >> cfg.n_enc_layers;
    else if (key == "n_dec_layers") vs >> cfg.n_dec_layers;
    else if (key == "d_ff") vs >> cfg.d_ff;
    else if (key == "max_len") vs >> cfg.max_len;
    else if (key == "vocab_size") vs >> cfg.vocab_size;
    else if (key == "n_relations") vs >> cfg.n_relations;
    else if (key == "seq2seq_dropout_p") vs >> cfg.seq2seq_dropout_p;
    else if (key == "seed") vs >> cfg.seed;
    else if (key == "vocab_digest") vs >> digest;
    else if (key == "epochs_done") vs >> epochs_done;
    else if (key == "adam_step") vs >> adam_step_count;
    else if (key == "adam_lr") vs >> adam_cfg.lr;
    else if (key == "adam_beta1") vs >> adam_cfg.beta1;
    else if (key == "adam_beta2") vs >> adam_cfg.beta2;
    else if (key == "adam_eps") vs >> adam_cfg.eps;
    else fail("checkpoint " + path.string() + ": unknown header key '" + key + "'");
    if (vs.fail()) fail("checkpoint " + path.string() + ": bad value for '" + key + "'");
  }

  if (expect_vocab && expect_vocab->digest() != digest)
    fail("checkpoint " + path.string() + ": vocab digest mismatch");

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_digest = digest;
  ckpt.epochs_done = epochs_done;
  ckpt.params = Seq2SeqParams::zeros(cfg);
  ckpt.opt = OptimState::create(cfg, adam_cfg);
  ckpt.opt.step = adam_step_count;

  for (ParamRef& ref : param_entries(ckpt.params))
    detail_ckpt::read_array(in, *ref.mat, ref.name, path);
  for (ParamRef& ref : param_entries(ckpt.opt.m))
    detail_ckpt::read_array(in, *ref.mat, "m." + ref.name, path);
  for (ParamRef& ref : param_entries(ckpt.opt.v))
    detail_ckpt::read_array(in, *ref.mat, "v." + ref.name, path);

  std::string trailer(std::strlen(detail_ckpt::kTrailer), '\0');
  in.read(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!in || trailer != detail_ckpt::kTrailer)
    fail("truncated checkpoint " + path.string() + ": missing trailer");
  return ckpt;
}

}  // namespace kgs2s
