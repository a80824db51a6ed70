#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kgs2s/common.hpp"
#include "kgs2s/mat.hpp"
#include "kgs2s/rng.hpp"
#include "kgs2s/verbalize.hpp"
#include "kgs2s/vocab.hpp"

namespace kgs2s {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  int max_len = 128;
  int vocab_size = 0;
  int n_relations = 0;
  double seq2seq_dropout_p = 0.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_ff < 1 || max_len < 1 || vocab_size < 1 ||
        n_relations < 1 || n_enc_layers < 1 || n_dec_layers < 1)
      fail("model config: all sizes must be >= 1");
    if (d_model % n_heads != 0) fail("model config: d_model must be divisible by n_heads");
    if (seq2seq_dropout_p < 0.0 || seq2seq_dropout_p > 1.0)
      fail("model config: seq2seq_dropout_p must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct LayerNormW {
  Mat gain, bias;  // 1 x d
};

struct AttnW {
  Mat wq, wk, wv, wo;  // d x d
  Mat bq, bk, bv, bo;  // 1 x d
};

struct FfnW {
  Mat w1;  // d x f
  Mat b1;  // 1 x f
  Mat w2;  // f x d
  Mat b2;  // 1 x d
};

struct EncLayerW {
  LayerNormW ln1;
  AttnW attn;
  LayerNormW ln2;
  FfnW ffn;
};

struct DecLayerW {
  LayerNormW ln1;
  AttnW self_attn;
  LayerNormW ln2;
  AttnW cross_attn;
  LayerNormW ln3;
  FfnW ffn;
};

// Every trainable array of the model. The relation soft-prompt table stores
// the four rows P[r][0..3] contiguously per relation; the token embedding
// table doubles as the tied output projection.
struct Seq2SeqParams {
  ModelConfig config;
  Mat tok_emb;  // vocab_size x d
  Mat pos_emb;  // max_len x d
  std::vector<EncLayerW> enc;
  std::vector<DecLayerW> dec;
  LayerNormW enc_final;
  LayerNormW dec_final;
  Mat prompt;  // n_relations x 4*d

  static Seq2SeqParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    Seq2SeqParams p;
    p.config = cfg;
    const int d = cfg.d_model, f = cfg.d_ff;
    auto ln = [d] { return LayerNormW{Mat(1, d), Mat(1, d)}; };
    auto attn = [d] {
      return AttnW{Mat(d, d), Mat(d, d), Mat(d, d), Mat(d, d),
                   Mat(1, d), Mat(1, d), Mat(1, d), Mat(1, d)};
    };
    auto ffn = [d, f] { return FfnW{Mat(d, f), Mat(1, f), Mat(f, d), Mat(1, d)}; };
    p.tok_emb = Mat(cfg.vocab_size, d);
    p.pos_emb = Mat(cfg.max_len, d);
    for (int i = 0; i < cfg.n_enc_layers; ++i) p.enc.push_back({ln(), attn(), ln(), ffn()});
    for (int i = 0; i < cfg.n_dec_layers; ++i)
      p.dec.push_back({ln(), attn(), ln(), attn(), ln(), ffn()});
    p.enc_final = ln();
    p.dec_final = ln();
    p.prompt = Mat(cfg.n_relations, 4 * d);
    return p;
  }

  static Seq2SeqParams init(const ModelConfig& cfg);
};

struct ParamRef {
  std::string name;
  Mat* mat;
};

struct ConstParamRef {
  std::string name;
  const Mat* mat;
};

// Deterministic enumeration of every parameter array; the order fixes the
// checkpoint layout, the Adam state layout and the init stream.
inline std::vector<ParamRef> param_entries(Seq2SeqParams& p) {
  std::vector<ParamRef> out;
  auto add = [&out](std::string name, Mat& m) { out.push_back({std::move(name), &m}); };
  auto add_ln = [&](const std::string& prefix, LayerNormW& w) {
    add(prefix + ".gain", w.gain);
    add(prefix + ".bias", w.bias);
  };
  auto add_attn = [&](const std::string& prefix, AttnW& w) {
    add(prefix + ".wq", w.wq);
    add(prefix + ".wk", w.wk);
    add(prefix + ".wv", w.wv);
    add(prefix + ".wo", w.wo);
    add(prefix + ".bq", w.bq);
    add(prefix + ".bk", w.bk);
    add(prefix + ".bv", w.bv);
    add(prefix + ".bo", w.bo);
  };
  auto add_ffn = [&](const std::string& prefix, FfnW& w) {
    add(prefix + ".w1", w.w1);
    add(prefix + ".b1", w.b1);
    add(prefix + ".w2", w.w2);
    add(prefix + ".b2", w.b2);
  };
  add("tok_emb", p.tok_emb);
  add("pos_emb", p.pos_emb);
  for (std::size_t i = 0; i < p.enc.size(); ++i) {
    const std::string base = "enc" + std::to_string(i);
    add_ln(base + ".ln1", p.enc[i].ln1);
    add_attn(base + ".attn", p.enc[i].attn);
    add_ln(base + ".ln2", p.enc[i].ln2);
    add_ffn(base + ".ffn", p.enc[i].ffn);
  }
  for (std::size_t i = 0; i < p.dec.size(); ++i) {
    const std::string base = "dec" + std::to_string(i);
    add_ln(base + ".ln1", p.dec[i].ln1);
    add_attn(base + ".self_attn", p.dec[i].self_attn);
    add_ln(base + ".ln2", p.dec[i].ln2);
    add_attn(base + ".cross_attn", p.dec[i].cross_attn);
    add_ln(base + ".ln3", p.dec[i].ln3);
    add_ffn(base + ".ffn", p.dec[i].ffn);
  }
  add_ln("enc_final", p.enc_final);
  add_ln("dec_final", p.dec_final);
  add("prompt", p.prompt);
  return out;
}

inline std::vector<ConstParamRef> param_entries(const Seq2SeqParams& p) {
  std::vector<ConstParamRef> out;
  for (ParamRef& r : param_entries(const_cast<Seq2SeqParams&>(p)))
    out.push_back({std::move(r.name), r.mat});
  return out;
}

inline Seq2SeqParams Seq2SeqParams::init(const ModelConfig& cfg) {
  Seq2SeqParams p = zeros(cfg);
  Rng rng(cfg.seed);
  for (ParamRef& ref : param_entries(p)) {
    const std::string leaf = ref.name.substr(ref.name.rfind('.') + 1);
    if (leaf == "gain") {
      std::fill(ref.mat->a.begin(), ref.mat->a.end(), 1.0);
    } else if (leaf == "bias" || leaf[0] == 'b') {
      // zero-initialized already
    } else {
      for (double& x : ref.mat->a) x = rng.normal(0.0, 0.02);
    }
  }
  return p;
}

// Closed-form parameter count. Adding a relation costs exactly 4*d; adding an
// entity costs nothing while the vocabulary is held fixed.
inline std::int64_t param_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, f = cfg.d_ff;
  const std::int64_t ln = 2 * d;
  const std::int64_t attn = 4 * d * d + 4 * d;
  const std::int64_t ffn = d * f + f + f * d + d;
  const std::int64_t enc_layer = 2 * ln + attn + ffn;
  const std::int64_t dec_layer = 3 * ln + 2 * attn + ffn;
  return cfg.vocab_size * d + cfg.max_len * d + cfg.n_enc_layers * enc_layer +
         cfg.n_dec_layers * dec_layer + 2 * ln + cfg.n_relations * 4 * d;
}

inline std::int64_t param_growth(const ModelConfig& cfg, int delta_relations,
                                 int /*delta_entities: vocabulary held fixed*/) {
  ModelConfig grown = cfg;
  grown.n_relations += delta_relations;
  return param_count(grown) - param_count(cfg);
}

// ---------------------------------------------------------------------------
// Seq2Seq dropout

// Independently flips maskable attention bits to 0 with probability p. One
// draw is shared by the encoder self-attention and the decoder
// cross-attention view of the same example.
inline std::vector<std::uint8_t> apply_seq2seq_dropout(const VerbalizedQuery& q, double p,
                                                       Rng& rng) {
  if (p < 0.0 || p > 1.0) fail("seq2seq dropout p must lie in [0,1]");
  std::vector<std::uint8_t> bits = q.attn;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (q.maskable[i] && rng.bernoulli(p)) bits[i] = 0;
  return bits;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct EncoderInput {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> attn;  // 1 = attend; includes any dropout flips
  RelationId rel = 0;
};

struct DecoderTeacher {
  std::vector<TokenId> input;   // target shifted right, starts with <bos>
  std::vector<TokenId> target;  // <pad> positions are excluded from the loss
};

struct TrainExample {
  EncoderInput enc;
  DecoderTeacher dec;
};

inline EncoderInput encoder_input_from_query(const VerbalizedQuery& q) {
  return {q.tokens, q.attn, q.rel};
}

inline DecoderTeacher teacher_from_answer(const TokenSeq& answer) {
  if (answer.ids.size() < 2) fail("answer sequence too short");
  DecoderTeacher t;
  t.input.assign(answer.ids.begin(), answer.ids.end() - 1);
  t.target.assign(answer.ids.begin() + 1, answer.ids.end());
  return t;
}

namespace nn {

constexpr double kLnEps = 1e-5;

struct LnCache {
  Mat xhat;
  std::vector<double> rstd;
};

inline Mat layernorm_fwd(const Mat& x, const LayerNormW& w, LnCache& c) {
  const int L = x.rows, d = x.cols;
  Mat y(L, d);
  c.xhat = Mat(L, d);
  c.rstd.assign(static_cast<std::size_t>(L), 0.0);
  for (int i = 0; i < L; ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    c.rstd[static_cast<std::size_t>(i)] = rstd;
    double* xh = c.xhat.row(i);
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * rstd;
      yi[j] = w.gain(0, j) * xh[j] + w.bias(0, j);
    }
  }
  return y;
}

inline void layernorm_bwd(const Mat& dy, const LnCache& c, const LayerNormW& w, Mat& dx,
                          LayerNormW& dw) {
  const int L = dy.rows, d = dy.cols;
  for (int i = 0; i < L; ++i) {
    const double* dyi = dy.row(i);
    const double* xh = c.xhat.row(i);
    const double rstd = c.rstd[static_cast<std::size_t>(i)];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      dw.gain(0, j) += dyi[j] * xh[j];
      dw.bias(0, j) += dyi[j];
      const double dxhat = dyi[j] * w.gain(0, j);
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[j];
    }
    const double inv_d = 1.0 / d;
    double* dxi = dx.row(i);
    for (int j = 0; j < d; ++j) {
      const double dxhat = dyi[j] * w.gain(0, j);
      dxi[j] += rstd * (dxhat - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
    }
  }
}

inline Mat linear_fwd(const Mat& x, const Mat& w, const Mat& b) {
  Mat y(x.rows, w.cols);
  gemm_acc(x, w, y);
  for (int i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (int j = 0; j < y.cols; ++j) yi[j] += b(0, j);
  }
  return y;
}

inline void linear_bwd(const Mat& dy, const Mat& x, const Mat& w, Mat& dx, Mat& dw, Mat& db) {
  gemm_a_bt_acc(dy, w, dx);      // dx += dy * w^T
  gemm_at_b_acc(x, dy, dw);      // dw += x^T * dy
  for (int i = 0; i < dy.rows; ++i) {
    const double* dyi = dy.row(i);
    for (int j = 0; j < dy.cols; ++j) db(0, j) += dyi[j];
  }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

struct FfnCache {
  Mat xin;  // post-LN input
  Mat u;    // pre-activation
  Mat act;
};

inline Mat ffn_fwd(const Mat& x, const FfnW& w, FfnCache& c) {
  c.xin = x;
  c.u = linear_fwd(x, w.w1, w.b1);
  c.act = Mat(c.u.rows, c.u.cols);
  for (std::size_t i = 0; i < c.u.a.size(); ++i) c.act.a[i] = gelu(c.u.a[i]);
  return linear_fwd(c.act, w.w2, w.b2);
}

inline void ffn_bwd(const Mat& dy, const FfnCache& c, const FfnW& w, Mat& dx, FfnW& dw) {
  Mat dact(c.act.rows, c.act.cols);
  linear_bwd(dy, c.act, w.w2, dact, dw.w2, dw.b2);
  Mat du(c.u.rows, c.u.cols);
  for (std::size_t i = 0; i < c.u.a.size(); ++i) du.a[i] = dact.a[i] * gelu_grad(c.u.a[i]);
  linear_bwd(du, c.xin, w.w1, dx, dw.w1, dw.b1);
}

// key_bits: per-key attend bit (null = all allowed); causal restricts key j
// to j <= query i. A query row with no allowed key yields a zero context row.
struct AttnMask {
  const std::vector<std::uint8_t>* key_bits = nullptr;
  bool causal = false;

  bool allowed(int i, int j) const {
    if (causal && j > i) return false;
    return !key_bits || (*key_bits)[static_cast<std::size_t>(j)] != 0;
  }
};

struct AttnCache {
  Mat xq, xkv;  // post-LN projection inputs
  Mat q, k, v;
  std::vector<Mat> probs;  // one Lq x Lk matrix per head
  Mat ctx;
};

inline Mat attention_fwd(const Mat& xq, const Mat& xkv, const AttnW& w, const AttnMask& mask,
                         int n_heads, AttnCache& c) {
  const int Lq = xq.rows, Lk = xkv.rows, d = xq.cols;
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.xq = xq;
  c.xkv = xkv;
  c.q = linear_fwd(xq, w.wq, w.bq);
  c.k = linear_fwd(xkv, w.wk, w.bk);
  c.v = linear_fwd(xkv, w.wv, w.bv);
  c.ctx = Mat(Lq, d);
  c.probs.assign(static_cast<std::size_t>(n_heads), Mat());

  std::vector<double> scores(static_cast<std::size_t>(Lk));
  for (int h = 0; h < n_heads; ++h) {
    Mat& probs = c.probs[static_cast<std::size_t>(h)];
    probs = Mat(Lq, Lk);
    const int off = h * dh;
    for (int i = 0; i < Lq; ++i) {
      const double* qi = c.q.row(i) + off;
      double best = -1e300;
      for (int j = 0; j < Lk; ++j) {
        if (!mask.allowed(i, j)) continue;
        const double* kj = c.k.row(j) + off;
        double s = 0.0;
        for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
        s *= scale;
        scores[static_cast<std::size_t>(j)] = s;
        if (s > best) best = s;
      }
      if (best == -1e300) continue;  // no allowed key: zero row
      double z = 0.0;
      for (int j = 0; j < Lk; ++j) {
        if (!mask.allowed(i, j)) continue;
        const double e = std::exp(scores[static_cast<std::size_t>(j)] - best);
        probs(i, j) = e;
        z += e;
      }
      double* ctx_i = c.ctx.row(i) + off;
      for (int j = 0; j < Lk; ++j) {
        if (probs(i, j) == 0.0) continue;
        const double a = probs(i, j) / z;
        probs(i, j) = a;
        const double* vj = c.v.row(j) + off;
        for (int t = 0; t < dh; ++t) ctx_i[t] += a * vj[t];
      }
    }
  }
  return linear_fwd(c.ctx, w.wo, w.bo);
}

inline void attention_bwd(const Mat& dy, const AttnCache& c, const AttnW& w, int n_heads,
                          Mat& dxq, Mat& dxkv, AttnW& dw) {
  const int Lq = c.xq.rows, Lk = c.xkv.rows, d = c.xq.cols;
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dctx(Lq, d);
  linear_bwd(dy, c.ctx, w.wo, dctx, dw.wo, dw.bo);

  Mat dq(Lq, d), dk(Lk, d), dv(Lk, d);
  std::vector<double> dprob(static_cast<std::size_t>(Lk));
  for (int h = 0; h < n_heads; ++h) {
    const Mat& probs = c.probs[static_cast<std::size_t>(h)];
    const int off = h * dh;
    for (int i = 0; i < Lq; ++i) {
      const double* dctx_i = dctx.row(i) + off;
      // dprob(j) = dctx_i . v_j ; dv_j += a(i,j) * dctx_i
      double dot = 0.0;  // sum_j dprob(j) * a(i,j)
      for (int j = 0; j < Lk; ++j) {
        const double a = probs(i, j);
        if (a == 0.0) {
          dprob[static_cast<std::size_t>(j)] = 0.0;
          continue;
        }
        const double* vj = c.v.row(j) + off;
        double s = 0.0;
        for (int t = 0; t < dh; ++t) s += dctx_i[t] * vj[t];
        dprob[static_cast<std::size_t>(j)] = s;
        dot += s * a;
        double* dvj = dv.row(j) + off;
        for (int t = 0; t < dh; ++t) dvj[t] += a * dctx_i[t];
      }
      // softmax backward, then into q and k
      const double* qi = c.q.row(i) + off;
      double* dqi = dq.row(i) + off;
      for (int j = 0; j < Lk; ++j) {
        const double a = probs(i, j);
        if (a == 0.0) continue;
        const double ds = a * (dprob[static_cast<std::size_t>(j)] - dot) * scale;
        const double* kj = c.k.row(j) + off;
        double* dkj = dk.row(j) + off;
        for (int t = 0; t < dh; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
  linear_bwd(dq, c.xq, w.wq, dxq, dw.wq, dw.bq);
  linear_bwd(dk, c.xkv, w.wk, dxkv, dw.wk, dw.bk);
  linear_bwd(dv, c.xkv, w.wv, dxkv, dw.wv, dw.bv);
}

}  // namespace nn

struct EncLayerCache {
  Mat x_in;
  nn::LnCache ln1;
  nn::AttnCache attn;
  Mat x_mid;
  nn::LnCache ln2;
  nn::FfnCache ffn;
};

struct DecLayerCache {
  Mat x_in;
  nn::LnCache ln1;
  nn::AttnCache self_attn;
  Mat x_mid1;
  nn::LnCache ln2;
  nn::AttnCache cross_attn;
  Mat x_mid2;
  nn::LnCache ln3;
  nn::FfnCache ffn;
};

struct EncCache {
  std::vector<int> prompt_slot;  // per position: 0..3 for <p1>..<p4>, else -1
  Mat emb;
  std::vector<EncLayerCache> layers;
  Mat x_last;
  nn::LnCache final_ln;
  Mat out;
};

struct DecCache {
  Mat emb;
  std::vector<DecLayerCache> layers;
  Mat x_last;
  nn::LnCache final_ln;
  Mat out;
  Mat logits;
  Mat probs;  // softmax of logits, for the loss backward
};

struct ForwardCache {
  EncCache enc;
  DecCache dec;
};

namespace detail_model {

inline int prompt_slot_of(TokenId id) {
  if (id == Vocab::kP1) return 0;
  if (id == Vocab::kP2) return 1;
  if (id == Vocab::kP3) return 2;
  if (id == Vocab::kP4) return 3;
  return -1;
}

}  // namespace detail_model

// Encoder stack. Token + learned position embeddings, with the four reserved
// prompt positions replaced by rows of the relation's soft-prompt block;
// pre-norm layers; final layer norm.
inline void encode_forward(const Seq2SeqParams& p, const EncoderInput& in, EncCache& c,
                           bool substitute_prompts = true) {
  const ModelConfig& cfg = p.config;
  const int L = static_cast<int>(in.tokens.size());
  const int d = cfg.d_model;
  if (L > cfg.max_len) fail("encoder sequence exceeds max_len");
  if (in.rel < 0 || in.rel >= cfg.n_relations) fail("relation id out of range");

  c.prompt_slot.assign(static_cast<std::size_t>(L), -1);
  c.emb = Mat(L, d);
  for (int i = 0; i < L; ++i) {
    const TokenId tok = in.tokens[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= cfg.vocab_size) fail("token id out of range");
    const int slot = substitute_prompts ? detail_model::prompt_slot_of(tok) : -1;
    c.prompt_slot[static_cast<std::size_t>(i)] = slot;
    const double* src = slot >= 0 ? p.prompt.row(in.rel) + slot * d : p.tok_emb.row(tok);
    const double* pos = p.pos_emb.row(i);
    double* dst = c.emb.row(i);
    for (int j = 0; j < d; ++j) dst[j] = src[j] + pos[j];
  }

  nn::AttnMask mask{&in.attn, false};
  Mat x = c.emb;
  c.layers.assign(static_cast<std::size_t>(cfg.n_enc_layers), {});
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    EncLayerCache& lc = c.layers[static_cast<std::size_t>(l)];
    const EncLayerW& w = p.enc[static_cast<std::size_t>(l)];
    lc.x_in = x;
    Mat xn = nn::layernorm_fwd(x, w.ln1, lc.ln1);
    Mat a = nn::attention_fwd(xn, xn, w.attn, mask, cfg.n_heads, lc.attn);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += a.a[i];
    lc.x_mid = x;
    Mat xn2 = nn::layernorm_fwd(x, w.ln2, lc.ln2);
    Mat f = nn::ffn_fwd(xn2, w.ffn, lc.ffn);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += f.a[i];
  }
  c.x_last = x;
  c.out = nn::layernorm_fwd(x, p.enc_final, c.final_ln);
}

// Decoder stack over a teacher-forced input; causal self-attention plus
// cross-attention to the encoder states under the encoder attention bits.
// Logits are the decoder states against the transposed token embeddings.
inline void decode_forward(const Seq2SeqParams& p, const EncoderInput& enc_in,
                           const Mat& enc_out, const std::vector<TokenId>& dec_input,
                           DecCache& c) {
  const ModelConfig& cfg = p.config;
  const int L = static_cast<int>(dec_input.size());
  const int d = cfg.d_model;
  if (L > cfg.max_len) fail("decoder sequence exceeds max_len");

  c.emb = Mat(L, d);
  for (int i = 0; i < L; ++i) {
    const TokenId tok = dec_input[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= cfg.vocab_size) fail("token id out of range");
    const double* src = p.tok_emb.row(tok);
    const double* pos = p.pos_emb.row(i);
    double* dst = c.emb.row(i);
    for (int j = 0; j < d; ++j) dst[j] = src[j] + pos[j];
  }

  nn::AttnMask self_mask{nullptr, true};
  nn::AttnMask cross_mask{&enc_in.attn, false};
  Mat x = c.emb;
  c.layers.assign(static_cast<std::size_t>(cfg.n_dec_layers), {});
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    DecLayerCache& lc = c.layers[static_cast<std::size_t>(l)];
    const DecLayerW& w = p.dec[static_cast<std::size_t>(l)];
    lc.x_in = x;
    Mat xn = nn::layernorm_fwd(x, w.ln1, lc.ln1);
    Mat a = nn::attention_fwd(xn, xn, w.self_attn, self_mask, cfg.n_heads, lc.self_attn);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += a.a[i];
    lc.x_mid1 = x;
    Mat xn2 = nn::layernorm_fwd(x, w.ln2, lc.ln2);
    Mat cr = nn::attention_fwd(xn2, enc_out, w.cross_attn, cross_mask, cfg.n_heads,
                               lc.cross_attn);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += cr.a[i];
    lc.x_mid2 = x;
    Mat xn3 = nn::layernorm_fwd(x, w.ln3, lc.ln3);
    Mat f = nn::ffn_fwd(xn3, w.ffn, lc.ffn);
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += f.a[i];
  }
  c.x_last = x;
  c.out = nn::layernorm_fwd(x, p.dec_final, c.final_ln);
  c.logits = Mat(L, cfg.vocab_size);
  gemm_a_bt_acc(c.out, p.tok_emb, c.logits);
}

inline void forward_example(const Seq2SeqParams& p, const EncoderInput& enc_in,
                            const std::vector<TokenId>& dec_input, ForwardCache& cache,
                            bool substitute_prompts = true) {
  encode_forward(p, enc_in, cache.enc, substitute_prompts);
  decode_forward(p, enc_in, cache.enc.out, dec_input, cache.dec);
}

// Logits for one example (dec_len x vocab); eval-mode entry point for tests.
inline Mat forward_logits(const Seq2SeqParams& p, const EncoderInput& enc_in,
                          const std::vector<TokenId>& dec_input,
                          bool substitute_prompts = true) {
  ForwardCache cache;
  forward_example(p, enc_in, dec_input, cache, substitute_prompts);
  return cache.dec.logits;
}

// Mean negative log-likelihood over non-pad target positions.
inline double loss_cross_entropy(const Mat& logits, const std::vector<TokenId>& targets,
                                 TokenId pad_id) {
  if (static_cast<int>(targets.size()) != logits.rows)
    fail("loss: target length does not match logits");
  double total = 0.0;
  int n = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t == pad_id) continue;
    const double* row = logits.row(i);
    double best = row[0];
    for (int j = 1; j < logits.cols; ++j) best = std::max(best, row[j]);
    double z = 0.0;
    for (int j = 0; j < logits.cols; ++j) z += std::exp(row[j] - best);
    total += -(row[t] - best - std::log(z));
    ++n;
  }
  if (n == 0) fail("loss: all target positions are pad");
  return total / n;
}

// Sum of per-position NLL and the non-pad count; fills cache.dec.probs.
inline std::pair<double, int> nll_sum(ForwardCache& cache, const std::vector<TokenId>& targets,
                                      TokenId pad_id = Vocab::kPad) {
  Mat& logits = cache.dec.logits;
  cache.dec.probs = Mat(logits.rows, logits.cols);
  double total = 0.0;
  int n = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* row = logits.row(i);
    double* prow = cache.dec.probs.row(i);
    double best = row[0];
    for (int j = 1; j < logits.cols; ++j) best = std::max(best, row[j]);
    double z = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      prow[j] = std::exp(row[j] - best);
      z += prow[j];
    }
    for (int j = 0; j < logits.cols; ++j) prow[j] /= z;
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t == pad_id) continue;
    total += -std::log(prow[t]);
    ++n;
  }
  return {total, n};
}

// Exact analytic gradients of (sum of example NLLs) * scale, accumulated into
// `grads` (a zeros-shaped Seq2SeqParams). The caller picks scale = 1/(total
// non-pad targets in the batch) to differentiate the batch-mean loss.
inline void backward_example(const Seq2SeqParams& p, const EncoderInput& enc_in,
                             const std::vector<TokenId>& dec_input,
                             const std::vector<TokenId>& targets, ForwardCache& cache,
                             double scale, Seq2SeqParams& grads,
                             TokenId pad_id = Vocab::kPad) {
  const ModelConfig& cfg = p.config;
  const int Ld = static_cast<int>(dec_input.size());
  const int Le = static_cast<int>(enc_in.tokens.size());
  const int d = cfg.d_model;

  // loss -> logits
  Mat dlogits(Ld, cfg.vocab_size);
  for (int i = 0; i < Ld; ++i) {
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t == pad_id) continue;
    const double* prow = cache.dec.probs.row(i);
    double* drow = dlogits.row(i);
    for (int j = 0; j < cfg.vocab_size; ++j) drow[j] = prow[j] * scale;
    drow[t] -= scale;
  }

  // logits = dec_out * tok_emb^T
  Mat ddec_out(Ld, d);
  gemm_acc(dlogits, p.tok_emb, ddec_out);
  gemm_at_b_acc(dlogits, cache.dec.out, grads.tok_emb);

  // decoder final LN
  Mat dx(Ld, d);
  nn::layernorm_bwd(ddec_out, cache.dec.final_ln, p.dec_final, dx, grads.dec_final);

  // decoder layers in reverse; accumulate into the encoder output
  Mat denc_out(Le, d);
  for (int l = cfg.n_dec_layers - 1; l >= 0; --l) {
    DecLayerCache& lc = cache.dec.layers[static_cast<std::size_t>(l)];
    const DecLayerW& w = p.dec[static_cast<std::size_t>(l)];
    DecLayerW& gw = grads.dec[static_cast<std::size_t>(l)];

    Mat dxn3(Ld, d);
    nn::ffn_bwd(dx, lc.ffn, w.ffn, dxn3, gw.ffn);
    nn::layernorm_bwd(dxn3, lc.ln3, w.ln3, dx, gw.ln3);

    Mat dxn2(Ld, d);
    nn::attention_bwd(dx, lc.cross_attn, w.cross_attn, cfg.n_heads, dxn2, denc_out,
                      gw.cross_attn);
    nn::layernorm_bwd(dxn2, lc.ln2, w.ln2, dx, gw.ln2);

    Mat dxn1(Ld, d);
    nn::attention_bwd(dx, lc.self_attn, w.self_attn, cfg.n_heads, dxn1, dxn1, gw.self_attn);
    nn::layernorm_bwd(dxn1, lc.ln1, w.ln1, dx, gw.ln1);
  }

  // decoder embeddings
  for (int i = 0; i < Ld; ++i) {
    const TokenId tok = dec_input[static_cast<std::size_t>(i)];
    const double* src = dx.row(i);
    double* demb = grads.tok_emb.row(tok);
    double* dpos = grads.pos_emb.row(i);
    for (int j = 0; j < d; ++j) {
      demb[j] += src[j];
      dpos[j] += src[j];
    }
  }

  // encoder final LN
  Mat dex(Le, d);
  nn::layernorm_bwd(denc_out, cache.enc.final_ln, p.enc_final, dex, grads.enc_final);

  for (int l = cfg.n_enc_layers - 1; l >= 0; --l) {
    EncLayerCache& lc = cache.enc.layers[static_cast<std::size_t>(l)];
    const EncLayerW& w = p.enc[static_cast<std::size_t>(l)];
    EncLayerW& gw = grads.enc[static_cast<std::size_t>(l)];

    Mat dxn2(Le, d);
    nn::ffn_bwd(dex, lc.ffn, w.ffn, dxn2, gw.ffn);
    nn::layernorm_bwd(dxn2, lc.ln2, w.ln2, dex, gw.ln2);

    Mat dxn1(Le, d);
    nn::attention_bwd(dex, lc.attn, w.attn, cfg.n_heads, dxn1, dxn1, gw.attn);
    nn::layernorm_bwd(dxn1, lc.ln1, w.ln1, dex, gw.ln1);
  }

  // encoder embeddings: prompt slots route to the soft-prompt table
  for (int i = 0; i < Le; ++i) {
    const double* src = dex.row(i);
    double* dpos = grads.pos_emb.row(i);
    const int slot = cache.enc.prompt_slot[static_cast<std::size_t>(i)];
    double* demb = slot >= 0 ? grads.prompt.row(enc_in.rel) + slot * d
                             : grads.tok_emb.row(enc_in.tokens[static_cast<std::size_t>(i)]);
    for (int j = 0; j < d; ++j) {
      demb[j] += src[j];
      dpos[j] += src[j];
    }
  }
}

// Mean-NLL loss over the batch plus exact gradients accumulated into `grads`
// (zeros-shaped). out_tokens, when given, receives the non-pad target count.
inline double batch_loss_and_grad(const Seq2SeqParams& p, const std::vector<TrainExample>& batch,
                                  Seq2SeqParams& grads, int* out_tokens = nullptr) {
  if (batch.empty()) fail("empty batch");
  std::vector<ForwardCache> caches(batch.size());
  double total = 0.0;
  int n_tokens = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    forward_example(p, batch[b].enc, batch[b].dec.input, caches[b]);
    auto [nll, n] = nll_sum(caches[b], batch[b].dec.target);
    total += nll;
    n_tokens += n;
  }
  if (n_tokens == 0) fail("loss: all target positions are pad");
  const double scale = 1.0 / n_tokens;
  for (std::size_t b = 0; b < batch.size(); ++b)
    backward_example(p, batch[b].enc, batch[b].dec.input, batch[b].dec.target, caches[b],
                     scale, grads);
  if (out_tokens) *out_tokens = n_tokens;
  return total * scale;
}

// ---------------------------------------------------------------------------
// Inference-side entry points

struct EncodedQuery {
  EncoderInput input;
  Mat enc_out;
};

inline EncodedQuery encode_query(const Seq2SeqParams& p, const EncoderInput& in) {
  EncCache cache;
  encode_forward(p, in, cache);
  return {in, cache.out};
}

// Log-softmax over the next token after dec_prefix; eval mode, full recompute.
inline std::vector<double> next_token_log_probs(const Seq2SeqParams& p, const EncodedQuery& eq,
                                                const std::vector<TokenId>& dec_prefix) {
  DecCache cache;
  decode_forward(p, eq.input, eq.enc_out, dec_prefix, cache);
  const int last = cache.logits.rows - 1;
  const double* row = cache.logits.row(last);
  std::vector<double> out(static_cast<std::size_t>(cache.logits.cols));
  double best = row[0];
  for (int j = 1; j < cache.logits.cols; ++j) best = std::max(best, row[j]);
  double z = 0.0;
  for (int j = 0; j < cache.logits.cols; ++j) z += std::exp(row[j] - best);
  const double logz = std::log(z) + best;
  for (int j = 0; j < cache.logits.cols; ++j) out[static_cast<std::size_t>(j)] = row[j] - logz;
  return out;
}

}  // namespace kgs2s
