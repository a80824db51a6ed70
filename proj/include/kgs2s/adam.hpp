#pragma once

#include <cmath>
#include <cstdint>

#include "kgs2s/model.hpp"

namespace kgs2s {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment arrays are shaped exactly like the parameters and live in the same
// enumeration order.
struct OptimState {
  AdamConfig cfg;
  Seq2SeqParams m;
  Seq2SeqParams v;
  std::int64_t step = 0;

  static OptimState create(const ModelConfig& model_cfg, const AdamConfig& cfg) {
    return {cfg, Seq2SeqParams::zeros(model_cfg), Seq2SeqParams::zeros(model_cfg), 0};
  }
};

// Standard bias-corrected Adam update. Aborts on non-finite gradients.
inline void adam_step(Seq2SeqParams& params, Seq2SeqParams& grads, OptimState& state) {
  auto p_entries = param_entries(params);
  auto g_entries = param_entries(grads);
  auto m_entries = param_entries(state.m);
  auto v_entries = param_entries(state.v);

  state.step += 1;
  const AdamConfig& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (std::size_t e = 0; e < p_entries.size(); ++e) {
    Mat& theta = *p_entries[e].mat;
    Mat& g = *g_entries[e].mat;
    Mat& m = *m_entries[e].mat;
    Mat& v = *v_entries[e].mat;
    for (std::size_t i = 0; i < theta.a.size(); ++i) {
      const double gi = g.a[i];
      if (!std::isfinite(gi))
        fail("non-finite gradient in " + p_entries[e].name + " at step " +
             std::to_string(state.step));
      m.a[i] = c.beta1 * m.a[i] + (1.0 - c.beta1) * gi;
      v.a[i] = c.beta2 * v.a[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m.a[i] / bc1;
      const double vhat = v.a[i] / bc2;
      theta.a[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace kgs2s
