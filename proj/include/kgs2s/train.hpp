#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kgs2s/adam.hpp"
#include "kgs2s/checkpoint.hpp"
#include "kgs2s/decode.hpp"
#include "kgs2s/eval.hpp"
#include "kgs2s/graph.hpp"
#include "kgs2s/model.hpp"
#include "kgs2s/trie.hpp"
#include "kgs2s/verbalize.hpp"

namespace kgs2s {

struct TrainPlan {
  int batch_size = 32;
  double lr = 1e-3;
  int desc_len = 40;
  double seq2seq_dropout_p = 0.1;
  int max_epochs = 50;
  int eval_every = 5;
  int beam_width_for_valid = 10;
  std::uint64_t seed = 42;
  SplitMask block_splits = SplitMask::all();  // blocklist tries during validation decoding
  std::vector<int> hits_ns{1, 3, 10};
  int threads = 1;
};

struct TrainPair {
  VerbalizedQuery query;
  TokenSeq answer;
  EntityId answer_id = 0;
};

// Every train fact yields a tail-query pair and a head-query pair, in fact
// order. Epoch shuffling happens in the training loop.
inline std::vector<TrainPair> make_training_pairs(const KnowledgeGraph& g, const Vocab& v,
                                                  int desc_len, int max_len) {
  std::vector<TrainPair> pairs;
  pairs.reserve(g.train.size() * 2);
  for (const Fact& f : g.train) {
    for (Direction dir : {Direction::Tail, Direction::Head}) {
      TrainPair p;
      p.query = verbalize_query(g, v, query_from_fact(f, dir), desc_len, max_len);
      p.answer_id = fact_answer(f, dir);
      p.answer = verbalize_answer(g, v, p.answer_id, desc_len);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

struct EpochLog {
  int epoch = 0;         // 0 = initial state, before any update
  double loss = 0.0;     // NaN for the initial entry
  double valid_mrr = 0.0;
  bool evaluated = false;
};

struct TrainResult {
  Checkpoint best;   // highest valid MRR, earlier epoch on ties
  Checkpoint final;  // state after the last epoch; resume point
  double best_valid_mrr = 0.0;
  int best_epoch = 0;
  Seq2SeqParams final_params;
  std::vector<EpochLog> log;
};

inline std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out;
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch);
    out += '\t';
    out += std::isnan(e.loss) ? "-" : format_fixed6(e.loss);
    out += '\t';
    out += e.evaluated ? format_fixed6(e.valid_mrr) : "-";
    out += '\n';
  }
  return out;
}

// Adam training over shuffled mini-batches of both query directions, with a
// fresh Seq2Seq dropout draw every time an example is visited. Every
// eval_every epochs the valid split is ranked with a small constrained beam;
// the checkpoint with the best valid MRR is kept (ties keep the earlier one).
inline TrainResult train(const KnowledgeGraph& g, const Vocab& vocab, const ModelConfig& cfg,
                         const TrainPlan& plan,
                         const std::optional<Checkpoint>& resume = std::nullopt) {
  if (cfg.vocab_size != vocab.size()) fail("config vocab_size does not match vocabulary");
  if (cfg.n_relations != g.num_relations()) fail("config n_relations does not match graph");
  if (plan.batch_size < 1) fail("batch_size must be >= 1");
  if (plan.eval_every < 1) fail("eval_every must be >= 1");

  Seq2SeqParams params = resume ? resume->params : Seq2SeqParams::init(cfg);
  OptimState opt = resume ? resume->opt : OptimState::create(cfg, AdamConfig{plan.lr});
  std::int64_t start_epoch = resume ? resume->epochs_done : 0;

  const std::vector<TrainPair> pairs = make_training_pairs(g, vocab, plan.desc_len, cfg.max_len);
  if (pairs.empty()) fail("no training pairs");

  // shared inference context for validation
  const CountedTrie entity_trie = build_entity_trie(g, vocab);
  const auto name_index = build_name_index(g);
  const KnownTrueIndex block_index = build_known_true_index(g, plan.block_splits);
  const KnownTrueIndex filter_index = build_known_true_index(g, SplitMask::all());
  const int max_name = max_entity_name_len(g);

  auto valid_mrr = [&](const Seq2SeqParams& snapshot) {
    InferenceContext ctx{&g,           &vocab,      &snapshot, &entity_trie,
                         &name_index,  &block_index, plan.desc_len, max_name};
    EvalOptions eopt;
    eopt.predict.beam_width = plan.beam_width_for_valid;
    eopt.predict.constrained = true;
    eopt.hits_ns = plan.hits_ns;
    eopt.seed = plan.seed;
    eopt.threads = plan.threads;
    return evaluate_split(ctx, Split::Valid, filter_index, eopt).metrics.mrr;
  };

  TrainResult result;
  auto snapshot_checkpoint = [&](std::int64_t epochs_done) {
    return Checkpoint{cfg, vocab.digest(), params, opt, epochs_done};
  };

  double best = valid_mrr(params);
  result.best = snapshot_checkpoint(start_epoch);
  result.best_valid_mrr = best;
  result.best_epoch = static_cast<int>(start_epoch);
  result.log.push_back({static_cast<int>(start_epoch), std::nan(""), best, true});

  Seq2SeqParams grads = Seq2SeqParams::zeros(cfg);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::int64_t epoch = start_epoch + 1; epoch <= plan.max_epochs; ++epoch) {
    Rng shuffle_rng = derive_rng(plan.seed, static_cast<std::uint64_t>(epoch), 1);
    Rng dropout_rng = derive_rng(plan.seed, static_cast<std::uint64_t>(epoch), 2);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double epoch_nll = 0.0;
    std::int64_t epoch_tokens = 0;
    std::vector<TrainExample> batch;
    auto flush = [&] {
      if (batch.empty()) return;
      for (ParamRef& ref : param_entries(grads)) ref.mat->zero();
      int n_tokens = 0;
      const double loss = batch_loss_and_grad(params, batch, grads, &n_tokens);
      if (!std::isfinite(loss)) fail("non-finite loss at epoch " + std::to_string(epoch));
      adam_step(params, grads, opt);
      epoch_nll += loss * n_tokens;
      epoch_tokens += n_tokens;
      batch.clear();
    };

    for (std::size_t idx : order) {
      const TrainPair& p = pairs[idx];
      TrainExample ex;
      ex.enc.tokens = p.query.tokens;
      ex.enc.attn = apply_seq2seq_dropout(p.query, plan.seq2seq_dropout_p, dropout_rng);
      ex.enc.rel = p.query.rel;
      ex.dec = teacher_from_answer(p.answer);
      batch.push_back(std::move(ex));
      if (static_cast<int>(batch.size()) == plan.batch_size) flush();
    }
    flush();

    EpochLog entry;
    entry.epoch = static_cast<int>(epoch);
    entry.loss = epoch_nll / static_cast<double>(epoch_tokens);
    if (epoch % plan.eval_every == 0 || epoch == plan.max_epochs) {
      entry.valid_mrr = valid_mrr(params);
      entry.evaluated = true;
      if (entry.valid_mrr > best) {
        best = entry.valid_mrr;
        result.best = snapshot_checkpoint(epoch);
        result.best_valid_mrr = best;
        result.best_epoch = static_cast<int>(epoch);
      }
    }
    result.log.push_back(entry);
  }

  result.final_params = params;
  result.final = snapshot_checkpoint(std::max(start_epoch, static_cast<std::int64_t>(plan.max_epochs)));
  return result;
}

}  // namespace kgs2s
