#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "kgs2s/decode.hpp"
#include "kgs2s/graph.hpp"
#include "kgs2s/rng.hpp"

namespace kgs2s {

// Conceptual score vector for one query: candidates carry finite scores,
// every other entity scores -inf.
inline double candidate_score(const CandidateList& c, EntityId id) {
  for (const Candidate& cand : c.items)
    if (cand.id == id) return cand.score;
  return -std::numeric_limits<double>::infinity();
}

struct RankOutcome {
  int query_index = 0;
  Direction dir = Direction::Tail;
  EntityId target = 0;
  int rank = 1;
};

struct Metrics {
  double mrr = 0.0;
  std::map<int, double> hits;  // n -> fraction
  int n_queries = 0;
};

// Filtered rank with RANDOM tie mode: the query's other known-true entities
// leave the domain, entities scoring above the target count in full, and the
// target's exact-tie group (usually the -inf block) is broken by a seeded
// uniform shuffle.
inline int filtered_rank(const CandidateList& scores, EntityId target,
                         const std::set<EntityId>& filtered, int num_entities, Rng& rng) {
  if (filtered.count(target)) fail("filtered_rank: target must not be filtered");
  const double target_score = candidate_score(scores, target);

  int greater = 0;
  std::vector<EntityId> tie_group;  // ascending ids, target included
  std::set<EntityId> finite;
  for (const Candidate& c : scores.items) {
    if (filtered.count(c.id)) continue;
    finite.insert(c.id);
    if (c.id == target) continue;
    if (c.score > target_score) ++greater;
  }
  if (std::isinf(target_score)) {
    for (EntityId id = 0; id < num_entities; ++id)
      if (!filtered.count(id) && !finite.count(id)) tie_group.push_back(id);
  } else {
    for (const Candidate& c : scores.items)
      if (!filtered.count(c.id) && c.score == target_score) tie_group.push_back(c.id);
    std::sort(tie_group.begin(), tie_group.end());
  }

  rng.shuffle(tie_group);
  int position = 0;
  for (std::size_t i = 0; i < tie_group.size(); ++i)
    if (tie_group[i] == target) {
      position = static_cast<int>(i);
      break;
    }
  return 1 + greater + position;
}

inline Metrics metrics_from_ranks(const std::vector<int>& ranks, const std::vector<int>& ns) {
  Metrics m;
  m.n_queries = static_cast<int>(ranks.size());
  for (int n : ns) m.hits[n] = 0.0;
  for (int r : ranks) {
    m.mrr += 1.0 / r;
    for (int n : ns)
      if (r <= n) m.hits[n] += 1.0;
  }
  if (!ranks.empty()) {
    m.mrr /= m.n_queries;
    for (auto& [n, v] : m.hits) v /= m.n_queries;
  }
  return m;
}

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Human-readable metrics block: mrr= then hits@n= lines, 6 decimal places.
inline std::string format_metrics(const Metrics& m) {
  std::string out = "mrr=" + format_fixed6(m.mrr) + "\n";
  for (const auto& [n, v] : m.hits) out += "hits@" + std::to_string(n) + "=" + format_fixed6(v) + "\n";
  return out;
}

// Machine-readable mirror.
inline std::string metrics_tsv(const Metrics& m) {
  std::string out = "mrr\t" + format_fixed6(m.mrr) + "\n";
  for (const auto& [n, v] : m.hits) out += "hits@" + std::to_string(n) + "\t" + format_fixed6(v) + "\n";
  return out;
}

struct EvalOptions {
  PredictOptions predict;
  std::vector<int> hits_ns{1, 3, 10};
  std::uint64_t seed = 42;
  int threads = 1;
};

struct EvalResult {
  Metrics metrics;
  std::vector<RankOutcome> outcomes;
  std::vector<std::string> prediction_rows;  // one TSV row per query
};

inline std::string prediction_row(int query_index, Direction dir, EntityId gold, int rank,
                                  const CandidateList& cands) {
  std::string row = std::to_string(query_index) + "\t" + direction_name(dir) + "\t" +
                    std::to_string(gold) + "\t" + std::to_string(rank) + "\t";
  for (std::size_t i = 0; i < cands.items.size(); ++i) {
    if (i) row += ',';
    row += std::to_string(cands.items[i].id) + ":" + format_fixed6(cands.items[i].score);
  }
  return row;
}

// Both directions of every fact in the split: query 2*i is the tail query of
// fact i, query 2*i+1 the head query. The filter set comes from filter_index
// (normally built over train+valid+test) minus the target; the tie-break rng
// is derived per query so thread count cannot change any result.
inline EvalResult evaluate_split(const InferenceContext& ctx, Split split,
                                 const KnownTrueIndex& filter_index, const EvalOptions& opt) {
  const std::vector<Fact>& facts = ctx.graph->split(split);
  const int n_queries = static_cast<int>(facts.size()) * 2;
  EvalResult result;
  result.outcomes.assign(static_cast<std::size_t>(n_queries), {});
  result.prediction_rows.assign(static_cast<std::size_t>(n_queries), {});

  auto run_query = [&](int qi) {
    const Fact& f = facts[static_cast<std::size_t>(qi / 2)];
    const Direction dir = qi % 2 == 0 ? Direction::Tail : Direction::Head;
    const QuerySpec query = query_from_fact(f, dir);
    const EntityId target = fact_answer(f, dir);

    CandidateList cands = predict_topk(ctx, query, target, opt.predict);
    std::set<EntityId> filter = filter_index.answers(query_key(query));
    filter.erase(target);
    Rng rng = derive_rng(opt.seed, static_cast<std::uint64_t>(qi));
    const int rank = filtered_rank(cands, target, filter, ctx.graph->num_entities(), rng);

    result.outcomes[static_cast<std::size_t>(qi)] = {qi, dir, target, rank};
    result.prediction_rows[static_cast<std::size_t>(qi)] =
        prediction_row(qi, dir, target, rank, cands);
  };

  const int threads = std::max(1, opt.threads);
  if (threads == 1 || n_queries <= 1) {
    for (int qi = 0; qi < n_queries; ++qi) run_query(qi);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          const int qi = next.fetch_add(1);
          if (qi >= n_queries) return;
          run_query(qi);
        }
      });
    for (auto& th : pool) th.join();
  }

  std::vector<int> ranks;
  ranks.reserve(static_cast<std::size_t>(n_queries));
  for (const RankOutcome& o : result.outcomes) ranks.push_back(o.rank);
  result.metrics = metrics_from_ranks(ranks, opt.hits_ns);
  return result;
}

}  // namespace kgs2s
