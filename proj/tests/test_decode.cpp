#include <gtest/gtest.h>

#include <map>

#include "helpers.hpp"
#include "kgs2s/decode.hpp"

using namespace kgs2s;

namespace {

constexpr TokenId kA = 11, kB = 12, kC = 13;

// Toy prefix-dependent scorer over a 14-token vocabulary (reserved + a,b,c).
// Probabilities not mentioned in the table share the leftover mass uniformly.
struct ToyScorer {
  std::map<std::vector<TokenId>, std::map<TokenId, double>> table;
  int vocab = 14;

  std::vector<double> operator()(const std::vector<TokenId>& prefix) const {
    std::vector<double> probs(static_cast<std::size_t>(vocab), 0.0);
    auto it = table.find(prefix);
    double claimed = 0.0;
    if (it != table.end())
      for (const auto& [tok, p] : it->second) {
        probs[static_cast<std::size_t>(tok)] = p;
        claimed += p;
      }
    const double leftover = (1.0 - claimed) / vocab;
    for (double& p : probs) p += leftover;
    std::vector<double> lp(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) lp[i] = std::log(probs[i]);
    return lp;
  }
};

TEST(BeamSearch, HandBuiltTwoStepTopTwo) {
  // step 1 after <bos>, step 2 depends on the first token
  ToyScorer toy;
  toy.table[{Vocab::kBos}] = {{kA, 0.5}, {kB, 0.3}, {kC, 0.1}};
  toy.table[{Vocab::kBos, kA}] = {{kA, 0.1}, {kB, 0.6}, {kC, 0.2}};
  toy.table[{Vocab::kBos, kB}] = {{kA, 0.7}, {kB, 0.1}, {kC, 0.1}};
  toy.table[{Vocab::kBos, kC}] = {{kA, 0.3}, {kB, 0.3}, {kC, 0.3}};

  // exhaustive enumeration over the 9 two-token paths
  std::vector<std::pair<double, std::vector<TokenId>>> all;
  for (TokenId t1 : {kA, kB, kC}) {
    auto lp1 = toy({Vocab::kBos});
    auto lp2 = toy({Vocab::kBos, t1});
    for (TokenId t2 : {kA, kB, kC})
      all.push_back({lp1[static_cast<std::size_t>(t1)] + lp2[static_cast<std::size_t>(t2)],
                     {t1, t2}});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  auto hyps = beam_search([&toy](const auto& p) { return toy(p); }, 2, nullptr, 2);
  ASSERT_EQ(hyps.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(hyps[static_cast<std::size_t>(i)].name, all[static_cast<std::size_t>(i)].second);
    EXPECT_NEAR(hyps[static_cast<std::size_t>(i)].logp, all[static_cast<std::size_t>(i)].first,
                1e-12);
  }
}

TEST(BeamSearch, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ToyScorer toy;
    // random prefix-dependent tables up to depth 2
    auto random_row = [&rng] {
      std::map<TokenId, double> row;
      double budget = 0.9;
      for (TokenId t : {kA, kB, kC}) {
        const double p = budget * rng.uniform();
        row[t] = p;
        budget -= p;
      }
      return row;
    };
    toy.table[{Vocab::kBos}] = random_row();
    for (TokenId t : {kA, kB, kC}) toy.table[{Vocab::kBos, t}] = random_row();

    StepScorer scorer = [&toy](const auto& p) { return toy(p); };
    auto beam = beam_search(scorer, 1, nullptr, 2);

    // explicit greedy walk with the same stopping rules
    std::vector<TokenId> prefix{Vocab::kBos};
    std::vector<TokenId> name;
    bool saw_mask = false;
    while (static_cast<int>(name.size()) < 2) {
      auto lp = scorer(prefix);
      int arg = 0;
      for (int t = 1; t < 14; ++t) if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(arg)]) arg = t;
      prefix.push_back(arg);
      if (arg == Vocab::kEos || arg == Vocab::kLb) break;
      if (!saw_mask && name.empty() && arg == Vocab::kMask) {
        saw_mask = true;
        continue;
      }
      name.push_back(arg);
    }
    ASSERT_EQ(beam.size(), 1u) << "seed " << seed;
    EXPECT_EQ(beam[0].name, name) << "seed " << seed;
  }
}

TEST(BeamSearch, FullWidthEqualsExhaustiveOrdering) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    ToyScorer toy;
    auto random_row = [&rng] {
      std::map<TokenId, double> row;
      for (TokenId t : {kA, kB, kC}) row[t] = 0.05 + 0.25 * rng.uniform();
      return row;
    };
    toy.table[{Vocab::kBos}] = random_row();
    for (TokenId t1 : {kA, kB, kC}) {
      toy.table[{Vocab::kBos, t1}] = random_row();
      for (TokenId t2 : {kA, kB, kC}) toy.table[{Vocab::kBos, t1, t2}] = random_row();
    }
    StepScorer scorer = [&toy](const auto& p) { return toy(p); };

    // constrained to a 3-entity trie so the path set is finite and clean
    CountedTrie trie;
    trie.insert({kA, kB, kC}, 0);
    trie.insert({kA, kB}, 1);
    trie.insert({kB}, 2);
    DecodeConstraints cons{&trie, nullptr};

    auto hyps = beam_search(scorer, 64, &cons, 3);
    ASSERT_EQ(hyps.size(), 6u);  // 3 names x {<eos>, <lb>}

    // exhaustive: every (name, closing token) pair
    std::vector<std::pair<double, std::vector<TokenId>>> all;
    for (const auto& name : std::vector<std::vector<TokenId>>{{kA, kB, kC}, {kA, kB}, {kB}}) {
      for (TokenId closing : {Vocab::kEos, Vocab::kLb}) {
        std::vector<TokenId> prefix{Vocab::kBos};
        double total = scorer(prefix)[Vocab::kMask];
        prefix.push_back(Vocab::kMask);
        for (TokenId t : name) {
          total += scorer(prefix)[static_cast<std::size_t>(t)];
          prefix.push_back(t);
        }
        total += scorer(prefix)[static_cast<std::size_t>(closing)];
        prefix.push_back(closing);
        all.push_back({total, prefix});
      }
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      EXPECT_EQ(hyps[i].tokens, all[i].second) << "seed " << seed << " position " << i;
      EXPECT_NEAR(hyps[i].logp, all[i].first, 1e-12);
    }
  }
}

struct TinyModel {
  KnowledgeGraph g;
  Vocab vocab{};
  Seq2SeqParams params{};
  CountedTrie trie;
  std::unordered_map<std::string, std::vector<EntityId>> names;
  int max_name = 0;

  explicit TinyModel(std::uint64_t seed, int n_entities = 8) {
    Rng rng(seed);
    g = kgs2s::test::random_graph(rng, n_entities, 2, 3, 6);
    vocab = build_vocab(g, 4);
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.d_ff = 32;
    cfg.max_len = 48;
    cfg.vocab_size = vocab.size();
    cfg.n_relations = g.num_relations();
    cfg.seed = seed;
    params = Seq2SeqParams::init(cfg);
    trie = build_entity_trie(g, vocab);
    names = build_name_index(g);
    max_name = max_entity_name_len(g);
  }

  StepScorer scorer(const VerbalizedQuery& q) {
    encoded_ = encode_query(params, encoder_input_from_query(q));
    return make_model_scorer(params, encoded_);
  }

 private:
  EncodedQuery encoded_;
};

TEST(ConstrainedBeam, SoundOnRandomWeights) {
  int nonempty = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    TinyModel tm(seed);
    Rng rng(seed * 31 + 7);
    const Fact& f = tm.g.train[rng.uniform_int(tm.g.train.size())];
    const Direction dir = rng.bernoulli(0.5) ? Direction::Tail : Direction::Head;
    VerbalizedQuery q = verbalize_query(tm.g, tm.vocab, query_from_fact(f, dir), 4, 48);

    std::set<EntityId> blocked;
    CountedTrie block;
    for (EntityId id = 0; id < tm.g.num_entities(); ++id)
      if (rng.bernoulli(0.25)) {
        blocked.insert(id);
        block.insert(tm.vocab.tokenize(tm.g.entities[static_cast<std::size_t>(id)].name), id);
      }

    DecodeConstraints cons{&tm.trie, blocked.empty() ? nullptr : &block};
    auto hyps = beam_search(tm.scorer(q), 5, &cons, tm.max_name);
    CandidateList cands = collect_candidates(hyps, tm.vocab, tm.names, true, &blocked);
    EXPECT_EQ(cands.discarded, 0);
    EXPECT_LE(static_cast<int>(cands.items.size()), 5);
    for (const Candidate& c : cands.items) {
      EXPECT_GE(c.id, 0);
      EXPECT_LT(c.id, tm.g.num_entities());
      EXPECT_FALSE(blocked.count(c.id)) << "blocked entity generated, seed " << seed;
    }
    if (!cands.items.empty()) ++nonempty;
    for (std::size_t i = 1; i < cands.items.size(); ++i)
      EXPECT_LE(cands.items[i].score, cands.items[i - 1].score);
  }
  EXPECT_GT(nonempty, 40);
}

TEST(ConstrainedBeam, EarlyStoppingBudgetHolds) {
  TinyModel tm(5);
  const Fact& f = tm.g.train[0];
  VerbalizedQuery q = verbalize_query(tm.g, tm.vocab, query_from_fact(f, Direction::Tail), 4, 48);
  auto hyps = beam_search(tm.scorer(q), 8, nullptr, tm.max_name);  // unconstrained
  for (const Hypothesis& h : hyps) {
    EXPECT_TRUE(h.finished);
    EXPECT_LE(static_cast<int>(h.name.size()), tm.max_name);
  }
}

TEST(ConstrainedBeam, ScoreCoherence) {
  TinyModel tm(9);
  const Fact& f = tm.g.train[1];
  VerbalizedQuery q = verbalize_query(tm.g, tm.vocab, query_from_fact(f, Direction::Head), 4, 48);
  StepScorer scorer = tm.scorer(q);
  DecodeConstraints cons{&tm.trie, nullptr};
  auto hyps = beam_search(scorer, 6, &cons, tm.max_name);
  ASSERT_FALSE(hyps.empty());
  for (const Hypothesis& h : hyps) {
    // replay the scorer over the name span
    std::vector<TokenId> prefix{Vocab::kBos, Vocab::kMask};
    double name_lp = 0.0;
    std::vector<TokenId> replay{Vocab::kBos};
    double total = scorer(replay)[Vocab::kMask];
    replay.push_back(Vocab::kMask);
    for (TokenId t : h.name) {
      name_lp += scorer(replay)[static_cast<std::size_t>(t)];
      replay.push_back(t);
    }
    total += name_lp + scorer(replay)[static_cast<std::size_t>(h.tokens.back())];
    EXPECT_NEAR(h.name_logp, name_lp, 1e-9);
    EXPECT_NEAR(h.logp, total, 1e-9);
  }
}

TEST(ConstrainedBeam, EmptyEntityTrieIsError) {
  TinyModel tm(3);
  CountedTrie empty;
  DecodeConstraints cons{&empty, nullptr};
  VerbalizedQuery q =
      verbalize_query(tm.g, tm.vocab, query_from_fact(tm.g.train[0], Direction::Tail), 4, 48);
  EXPECT_THROW(beam_search(tm.scorer(q), 3, &cons, tm.max_name), KgError);
}

TEST(ConstrainedBeam, FullBlockGivesEmptyList) {
  TinyModel tm(13);
  std::set<EntityId> blocked;
  CountedTrie block;
  for (const Entity& e : tm.g.entities) {
    blocked.insert(e.id);
    block.insert(tm.vocab.tokenize(e.name), e.id);
  }
  DecodeConstraints cons{&tm.trie, &block};
  VerbalizedQuery q =
      verbalize_query(tm.g, tm.vocab, query_from_fact(tm.g.train[0], Direction::Tail), 4, 48);
  auto hyps = beam_search(tm.scorer(q), 4, &cons, tm.max_name);
  EXPECT_TRUE(hyps.empty());
}

TEST(RandomSample, FixedSeedReproduces) {
  TinyModel tm(21);
  VerbalizedQuery q =
      verbalize_query(tm.g, tm.vocab, query_from_fact(tm.g.train[2], Direction::Tail), 4, 48);
  DecodeConstraints cons{&tm.trie, nullptr};
  Rng r1(77), r2(77);
  auto a = random_sample(tm.scorer(q), 5, 1.0, &cons, tm.max_name, r1);
  auto b = random_sample(tm.scorer(q), 5, 1.0, &cons, tm.max_name, r2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].logp, b[i].logp);
  }
}

TEST(RandomSample, LowTemperatureConvergesToGreedy) {
  TinyModel tm(23);
  VerbalizedQuery q =
      verbalize_query(tm.g, tm.vocab, query_from_fact(tm.g.train[0], Direction::Tail), 4, 48);
  DecodeConstraints cons{&tm.trie, nullptr};
  auto greedy = beam_search(tm.scorer(q), 1, &cons, tm.max_name);
  ASSERT_EQ(greedy.size(), 1u);
  Rng rng(5);
  auto samples = random_sample(tm.scorer(q), 3, 1e-9, &cons, tm.max_name, rng);
  ASSERT_EQ(samples.size(), 3u);
  for (const Hypothesis& h : samples) EXPECT_EQ(h.tokens, greedy[0].tokens);
}

TEST(RandomSample, UnconstrainedProducesNonEntityText) {
  TinyModel tm(27);
  VerbalizedQuery q =
      verbalize_query(tm.g, tm.vocab, query_from_fact(tm.g.train[0], Direction::Tail), 4, 48);
  Rng rng(3);
  auto hyps = random_sample(tm.scorer(q), 100, 1.5, nullptr, tm.max_name, rng);
  CandidateList cands = collect_candidates(hyps, tm.vocab, tm.names, false);
  EXPECT_GE(cands.discarded, 1);
}

Hypothesis hand_hyp(const Vocab& v, const std::string& name, double score) {
  Hypothesis h;
  h.tokens = {Vocab::kBos, Vocab::kMask};
  for (TokenId t : v.tokenize(name)) {
    h.tokens.push_back(t);
    h.name.push_back(t);
  }
  h.tokens.push_back(Vocab::kEos);
  h.name_logp = score;
  h.logp = score - 0.5;
  h.finished = true;
  h.saw_mask = true;
  return h;
}

TEST(CollectCandidates, DedupKeepsMaxScore) {
  KnowledgeGraph g;
  g.entities = {{0, "A", ""}, {1, "B", ""}};
  g.relation_names = {"r"};
  Vocab v = build_vocab(g, 0);
  auto names = build_name_index(g);
  std::vector<Hypothesis> hyps{hand_hyp(v, "A", -1.0), hand_hyp(v, "A", -2.0),
                               hand_hyp(v, "B", -3.0)};
  CandidateList c = collect_candidates(hyps, v, names, false);
  ASSERT_EQ(c.items.size(), 2u);
  EXPECT_EQ(c.items[0].id, 0);
  EXPECT_EQ(c.items[0].score, -1.0);
  EXPECT_EQ(c.items[1].id, 1);
  EXPECT_EQ(c.items[1].score, -3.0);
  EXPECT_EQ(c.discarded, 0);
}

TEST(CollectCandidates, NonEntityDroppedAndCounted) {
  KnowledgeGraph g;
  g.entities = {{0, "Thriller", ""}};
  g.relation_names = {"r"};
  g.entities.push_back({1, "Superhero", ""});
  g.entities.push_back({2, "film", ""});
  Vocab v = build_vocab(g, 0);
  auto names = build_name_index(g);
  std::vector<Hypothesis> hyps{hand_hyp(v, "Superhero film", -1.0), hand_hyp(v, "Thriller", -2.0)};
  CandidateList c = collect_candidates(hyps, v, names, false);
  ASSERT_EQ(c.items.size(), 1u);
  EXPECT_EQ(c.items[0].id, 0);
  EXPECT_EQ(c.discarded, 1);
}

TEST(CollectCandidates, CollidingNamesScoreAllIds) {
  KnowledgeGraph g;
  g.entities = {{0, "Stan Lee", ""}, {1, "Stan Lee", "the other one"}, {2, "Hulk", ""}};
  g.relation_names = {"r"};
  Vocab v = build_vocab(g, 3);
  auto names = build_name_index(g);
  std::vector<Hypothesis> hyps{hand_hyp(v, "Stan Lee", -1.5)};
  CandidateList c = collect_candidates(hyps, v, names, false);
  ASSERT_EQ(c.items.size(), 2u);
  EXPECT_EQ(c.items[0].id, 0);
  EXPECT_EQ(c.items[1].id, 1);
  EXPECT_EQ(c.items[0].score, c.items[1].score);
}

TEST(CollectCandidates, BlockedCollisionFiltered) {
  KnowledgeGraph g;
  g.entities = {{0, "Stan Lee", ""}, {1, "Stan Lee", ""}};
  g.relation_names = {"r"};
  Vocab v = build_vocab(g, 0);
  auto names = build_name_index(g);
  std::set<EntityId> blocked{0};
  std::vector<Hypothesis> hyps{hand_hyp(v, "Stan Lee", -1.0)};
  CandidateList c = collect_candidates(hyps, v, names, true, &blocked);
  ASSERT_EQ(c.items.size(), 1u);
  EXPECT_EQ(c.items[0].id, 1);
}

TEST(PredictTopk, WidthBeyondEntityCountIsCapped) {
  TinyModel tm(33, 3);
  KnownTrueIndex block = build_known_true_index(tm.g, SplitMask::train_only());
  InferenceContext ctx{&tm.g, &tm.vocab, &tm.params, &tm.trie, &tm.names, &block, 4, tm.max_name};
  PredictOptions opt;
  opt.beam_width = 50;
  opt.constrained = true;
  CandidateList c = predict_topk(ctx, query_from_fact(tm.g.train[0], Direction::Tail),
                                 std::nullopt, opt);
  EXPECT_LE(static_cast<int>(c.items.size()), 3);
}

}  // namespace
