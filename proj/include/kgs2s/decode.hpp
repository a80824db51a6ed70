#pragma once

#include <algorithm>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "kgs2s/graph.hpp"
#include "kgs2s/model.hpp"
#include "kgs2s/rng.hpp"
#include "kgs2s/trie.hpp"
#include "kgs2s/verbalize.hpp"
#include "kgs2s/vocab.hpp"

namespace kgs2s {

// One decoding path. `tokens` is the decoder-side sequence including the
// <bos> primer; `logp` sums the chosen-token log-softmax of every generated
// step, `name_logp` only the name-token steps (the candidate score).
struct Hypothesis {
  std::vector<TokenId> tokens{Vocab::kBos};
  std::vector<TokenId> name;  // name tokens generated so far
  double logp = 0.0;
  double name_logp = 0.0;
  bool finished = false;
  bool saw_mask = false;
};

// Maps a decoder prefix (starting at <bos>) to next-token log-probs.
using StepScorer = std::function<std::vector<double>(const std::vector<TokenId>&)>;

struct DecodeConstraints {
  const CountedTrie* entity_trie = nullptr;
  const CountedTrie* block_trie = nullptr;  // may be null
};

namespace detail_decode {

// A scored candidate extension of one hypothesis. finish marks tokens that
// complete the name (<eos> or <lb>: either way the name part is over and
// generation stops early); is_name marks tokens that extend the name.
struct Extension {
  const Hypothesis* parent;
  TokenId token;
  double logp;        // parent logp + step logp
  double step_lp;
  bool is_name;
  bool finish;
};

inline bool extension_less(const Extension& a, const Extension& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  if (a.parent->tokens != b.parent->tokens) return a.parent->tokens < b.parent->tokens;
  return a.token < b.token;
}

inline Hypothesis apply_extension(const Extension& e) {
  Hypothesis h = *e.parent;
  h.tokens.push_back(e.token);
  h.logp = e.logp;
  if (e.is_name) {
    h.name.push_back(e.token);
    h.name_logp += e.step_lp;
  }
  if (!h.saw_mask && e.token == Vocab::kMask) h.saw_mask = true;
  if (e.finish) h.finished = true;
  return h;
}

// Legal continuations of one live hypothesis. Constrained mode forces the
// <mask> wrapper first, then walks the tries; the name may end (via <eos> or
// <lb>) only where a non-blocked entity name ends. Unconstrained mode lets
// the model roam and stops a path at <eos>/<lb>.
inline void collect_extensions(const Hypothesis& h, const std::vector<double>& lp,
                               const DecodeConstraints* constraints, int max_name_tokens,
                               std::vector<Extension>& out) {
  if (constraints) {
    if (!h.saw_mask) {
      out.push_back({&h, Vocab::kMask, h.logp + lp[Vocab::kMask], lp[Vocab::kMask], false, false});
      return;
    }
    AllowedNext allowed = allowed_next(*constraints->entity_trie, constraints->block_trie, h.name);
    for (TokenId t : allowed.tokens)
      out.push_back({&h, t, h.logp + lp[static_cast<std::size_t>(t)],
                     lp[static_cast<std::size_t>(t)], true, false});
    if (allowed.end_ok) {
      out.push_back({&h, Vocab::kEos, h.logp + lp[Vocab::kEos], lp[Vocab::kEos], false, true});
      out.push_back({&h, Vocab::kLb, h.logp + lp[Vocab::kLb], lp[Vocab::kLb], false, true});
    }
    return;
  }
  for (TokenId t = 0; t < static_cast<TokenId>(lp.size()); ++t) {
    const bool finish = t == Vocab::kEos || t == Vocab::kLb;
    const bool wrapper_mask = !h.saw_mask && h.name.empty() && t == Vocab::kMask;
    const bool is_name = !finish && !wrapper_mask;
    if (is_name && static_cast<int>(h.name.size()) >= max_name_tokens) continue;
    out.push_back({&h, t, h.logp + lp[static_cast<std::size_t>(t)],
                   lp[static_cast<std::size_t>(t)], is_name, finish});
  }
}

inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.tokens < b.tokens;
}

}  // namespace detail_decode

// Length-synchronous beam search with width K and no length normalization.
// Under constraints every surviving path spells a valid, non-blocked entity
// name; generation halts per path at end-of-name or when the name-token
// budget is exhausted. Returns up to K finished hypotheses, best first.
inline std::vector<Hypothesis> beam_search(const StepScorer& scorer, int beam_width,
                                           const DecodeConstraints* constraints,
                                           int max_name_tokens) {
  if (beam_width < 1) fail("beam width must be >= 1");
  if (max_name_tokens < 1) fail("max_name_tokens must be >= 1");
  if (constraints && constraints->entity_trie->empty()) fail("entity trie is empty");

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;
  const int max_steps = max_name_tokens + 2;  // <mask> + name + closing token

  for (int step = 0; step < max_steps && !live.empty(); ++step) {
    std::vector<detail_decode::Extension> extensions;
    std::vector<Hypothesis> still_live;
    for (Hypothesis& h : live) {
      if (!constraints && static_cast<int>(h.name.size()) >= max_name_tokens) {
        // unconstrained budget stop: the name cannot grow further, finish as-is
        Hypothesis capped = h;
        capped.finished = true;
        done.push_back(std::move(capped));
        continue;
      }
      still_live.push_back(std::move(h));
    }
    live = std::move(still_live);
    if (live.empty()) break;

    std::vector<std::vector<double>> lps(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) lps[i] = scorer(live[i].tokens);
    for (std::size_t i = 0; i < live.size(); ++i)
      detail_decode::collect_extensions(live[i], lps[i], constraints, max_name_tokens,
                                        extensions);
    if (extensions.empty()) break;

    const std::size_t keep = std::min<std::size_t>(extensions.size(),
                                                   static_cast<std::size_t>(beam_width));
    std::partial_sort(extensions.begin(), extensions.begin() + static_cast<std::ptrdiff_t>(keep),
                      extensions.end(), detail_decode::extension_less);
    extensions.resize(keep);

    std::vector<Hypothesis> next_live;
    for (const auto& e : extensions) {
      Hypothesis h = detail_decode::apply_extension(e);
      if (h.finished)
        done.push_back(std::move(h));
      else
        next_live.push_back(std::move(h));
    }
    live = std::move(next_live);
  }

  std::sort(done.begin(), done.end(), detail_decode::hyp_better);
  if (static_cast<int>(done.size()) > beam_width)
    done.resize(static_cast<std::size_t>(beam_width));
  return done;
}

// K independent ancestral samples from the per-step softmax, optionally
// constrained, with logits tempered by `temperature`. Stored log-probs are
// the untempered ones.
inline std::vector<Hypothesis> random_sample(const StepScorer& scorer, int k,
                                             double temperature,
                                             const DecodeConstraints* constraints,
                                             int max_name_tokens, Rng& rng) {
  if (k < 1) fail("sample count must be >= 1");
  if (temperature <= 0.0) fail("temperature must be > 0");
  if (constraints && constraints->entity_trie->empty()) fail("entity trie is empty");

  std::vector<Hypothesis> out;
  const int max_steps = max_name_tokens + 2;
  for (int s = 0; s < k; ++s) {
    Hypothesis h;
    for (int step = 0; step < max_steps && !h.finished; ++step) {
      if (!constraints && static_cast<int>(h.name.size()) >= max_name_tokens) {
        h.finished = true;
        break;
      }
      std::vector<double> lp = scorer(h.tokens);
      std::vector<detail_decode::Extension> extensions;
      detail_decode::collect_extensions(h, lp, constraints, max_name_tokens, extensions);
      if (extensions.empty()) break;  // constrained dead end

      double best = extensions[0].step_lp;
      for (const auto& e : extensions) best = std::max(best, e.step_lp);
      std::vector<double> w(extensions.size());
      double z = 0.0;
      for (std::size_t i = 0; i < extensions.size(); ++i) {
        w[i] = std::exp((extensions[i].step_lp - best) / temperature);
        z += w[i];
      }
      double u = rng.uniform() * z;
      std::size_t pick = extensions.size() - 1;
      for (std::size_t i = 0; i < extensions.size(); ++i) {
        u -= w[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
      h = detail_decode::apply_extension(extensions[pick]);
    }
    if (h.finished) out.push_back(std::move(h));
  }
  return out;
}

struct Candidate {
  EntityId id = 0;
  double score = 0.0;
};

struct CandidateList {
  std::vector<Candidate> items;  // unique ids, score non-increasing
  int discarded = 0;             // non-entity generations dropped (unconstrained mode)
};

// Parses hypotheses into entity candidates: non-entity text is dropped (and
// counted) in unconstrained mode, duplicate entities keep their best score,
// and a name shared by several entities scores all of them.
inline CandidateList collect_candidates(
    const std::vector<Hypothesis>& hyps, const Vocab& vocab,
    const std::unordered_map<std::string, std::vector<EntityId>>& name_index, bool constrained,
    const std::set<EntityId>* blocked = nullptr) {
  CandidateList out;
  std::unordered_map<EntityId, double> best;
  bool warned_collision = false;
  for (const Hypothesis& h : hyps) {
    if (!h.finished) continue;
    auto text = parse_prediction(vocab, h.tokens);
    if (!text) {
      ++out.discarded;
      continue;
    }
    auto it = name_index.find(*text);
    if (it == name_index.end()) {
      ++out.discarded;
      continue;
    }
    if (it->second.size() > 1 && !warned_collision) {
      std::cerr << "warning: generated name '" << *text << "' maps to "
                << it->second.size() << " colliding entities\n";
      warned_collision = true;
    }
    for (EntityId id : it->second) {
      if (blocked && blocked->count(id)) continue;
      auto [bit, inserted] = best.try_emplace(id, h.name_logp);
      if (!inserted) bit->second = std::max(bit->second, h.name_logp);
    }
  }
  if (constrained && out.discarded > 0)
    fail("constrained decoding produced non-entity text");  // soundness violation
  for (auto& [id, score] : best) out.items.push_back({id, score});
  std::sort(out.items.begin(), out.items.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Query-level composition

// Everything inference needs, built once per (graph, vocab, checkpoint) and
// shared read-only across queries.
struct InferenceContext {
  const KnowledgeGraph* graph = nullptr;
  const Vocab* vocab = nullptr;
  const Seq2SeqParams* params = nullptr;
  const CountedTrie* entity_trie = nullptr;
  const std::unordered_map<std::string, std::vector<EntityId>>* name_index = nullptr;
  const KnownTrueIndex* block_index = nullptr;  // over the configured split union
  int desc_len = 40;
  int max_name_tokens = 1;
};

struct PredictOptions {
  int beam_width = 40;
  bool constrained = true;
  bool sample = false;
  double temperature = 1.0;
  std::uint64_t sample_seed = 0;
};

inline StepScorer make_model_scorer(const Seq2SeqParams& params, const EncodedQuery& eq) {
  return [&params, &eq](const std::vector<TokenId>& prefix) {
    return next_token_log_probs(params, eq, prefix);
  };
}

// Verbalize, encode, decode under the selected strategy, and map the
// generated text to scored entity ids. eval_target, when given, is removed
// from the query's blocklist (filtered evaluation); without it every known
// answer is blocked.
inline CandidateList predict_topk(const InferenceContext& ctx, const QuerySpec& query,
                                  std::optional<EntityId> eval_target,
                                  const PredictOptions& opt) {
  VerbalizedQuery vq = verbalize_query(*ctx.graph, *ctx.vocab, query, ctx.desc_len,
                                       ctx.params->config.max_len);
  EncodedQuery eq = encode_query(*ctx.params, encoder_input_from_query(vq));
  StepScorer scorer = make_model_scorer(*ctx.params, eq);

  CountedTrie block_trie;
  DecodeConstraints constraints;
  std::set<EntityId> blocked;
  const DecodeConstraints* cptr = nullptr;
  if (opt.constrained) {
    blocked = ctx.block_index->answers(query_key(query));
    if (eval_target) blocked.erase(*eval_target);
    block_trie = build_block_trie(*ctx.graph, *ctx.vocab, *ctx.block_index, query_key(query),
                                  eval_target);
    constraints = {ctx.entity_trie, block_trie.empty() ? nullptr : &block_trie};
    cptr = &constraints;
  }

  std::vector<Hypothesis> hyps;
  if (opt.sample) {
    Rng rng(opt.sample_seed);
    hyps = random_sample(scorer, opt.beam_width, opt.temperature, cptr, ctx.max_name_tokens,
                         rng);
  } else {
    hyps = beam_search(scorer, opt.beam_width, cptr, ctx.max_name_tokens);
  }
  return collect_candidates(hyps, *ctx.vocab, *ctx.name_index, opt.constrained,
                            opt.constrained ? &blocked : nullptr);
}

}  // namespace kgs2s
