#pragma once

// Shared test utilities: temp dirs, dataset writers, synthetic graphs and a
// finite-difference gradient oracle. Test-only code; the library never
// includes this.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kgs2s/kgs2s.hpp"

namespace kgs2s::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = fs::temp_directory_path() / ("kgs2s_" + tag + "_XXXXXX");
    std::string tmpl = base.string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void spit(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// Serializes a graph in the on-disk dataset layout.
inline void write_dataset(const fs::path& dir, const KnowledgeGraph& g) {
  fs::create_directories(dir);
  std::string ents;
  for (const Entity& e : g.entities)
    ents += std::to_string(e.id) + "\t" + e.name + "\t" + e.description + "\n";
  spit(dir / "entities.tsv", ents);

  std::string rels;
  for (std::size_t i = 0; i < g.relation_names.size(); ++i)
    rels += std::to_string(i) + "\t" + g.relation_names[i] + "\n";
  spit(dir / "relations.tsv", rels);

  auto facts_text = [&](const std::vector<Fact>& facts) {
    std::string out;
    for (const Fact& f : facts) {
      out += std::to_string(f.head) + "\t" + std::to_string(f.rel) + "\t" +
             std::to_string(f.tail);
      if (g.meta_kind != MetaKind::None) out += "\t" + f.meta.text;
      out += "\n";
    }
    return out;
  };
  spit(dir / "train.tsv", facts_text(g.train));
  spit(dir / "valid.tsv", facts_text(g.valid));
  spit(dir / "test.tsv", facts_text(g.test));
}

// ---------------------------------------------------------------------------
// Synthetic graphs

// Random graph with names/descriptions drawn from small word pools. Names are
// forced unique by a per-entity marker token.
inline KnowledgeGraph random_graph(Rng& rng, int n_entities, int n_relations, int max_name_tokens,
                                   int n_train, bool with_descriptions = true) {
  KnowledgeGraph g;
  std::vector<std::string> pool;
  for (int i = 0; i < 25; ++i) pool.push_back("w" + std::to_string(i));
  for (EntityId id = 0; id < n_entities; ++id) {
    const int len = 1 + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(std::max(1, max_name_tokens))));
    std::string name = "e" + std::to_string(id);
    for (int t = 1; t < len; ++t) name += " " + pool[rng.uniform_int(pool.size())];
    std::string desc;
    if (with_descriptions && rng.bernoulli(0.8)) {
      const int dlen = 1 + static_cast<int>(rng.uniform_int(4));
      for (int t = 0; t < dlen; ++t) {
        if (t) desc += ' ';
        desc += pool[rng.uniform_int(pool.size())];
      }
    }
    g.entities.push_back({id, name, desc});
  }
  for (int r = 0; r < n_relations; ++r) g.relation_names.push_back("rel " + std::to_string(r));

  std::set<Fact> seen;
  while (static_cast<int>(g.train.size()) < n_train) {
    Fact f;
    f.head = static_cast<EntityId>(rng.uniform_int(static_cast<std::uint64_t>(n_entities)));
    f.tail = static_cast<EntityId>(rng.uniform_int(static_cast<std::uint64_t>(n_entities)));
    f.rel = static_cast<RelationId>(rng.uniform_int(static_cast<std::uint64_t>(n_relations)));
    if (seen.insert(f).second) g.train.push_back(f);
  }
  return g;
}

// Memorization benchmark graph: names and descriptions of 3..8 tokens drawn
// from separate pools, facts split train/valid with valid sampled from train
// so validation MRR tracks memorization.
inline KnowledgeGraph memorization_graph(std::uint64_t seed, int n_entities = 50,
                                         int n_relations = 5, int n_train = 200,
                                         int n_valid = 20) {
  Rng rng(seed);
  KnowledgeGraph g;
  std::vector<std::string> name_pool, desc_pool;
  for (int i = 0; i < 30; ++i) name_pool.push_back("n" + std::to_string(i));
  for (int i = 0; i < 30; ++i) desc_pool.push_back("d" + std::to_string(i));

  for (EntityId id = 0; id < n_entities; ++id) {
    const int name_len = 3 + static_cast<int>(rng.uniform_int(6));  // 3..8
    const int desc_len = 3 + static_cast<int>(rng.uniform_int(6));
    std::string name = "item" + std::to_string(id);
    for (int t = 1; t < name_len; ++t) name += " " + name_pool[rng.uniform_int(name_pool.size())];
    std::string desc;
    for (int t = 0; t < desc_len; ++t) {
      if (t) desc += ' ';
      desc += desc_pool[rng.uniform_int(desc_pool.size())];
    }
    g.entities.push_back({id, name, desc});
  }
  for (int r = 0; r < n_relations; ++r) g.relation_names.push_back("relation " + std::to_string(r));

  std::set<Fact> seen;
  while (static_cast<int>(g.train.size()) < n_train) {
    Fact f;
    f.head = static_cast<EntityId>(rng.uniform_int(static_cast<std::uint64_t>(n_entities)));
    f.tail = static_cast<EntityId>(rng.uniform_int(static_cast<std::uint64_t>(n_entities)));
    f.rel = static_cast<RelationId>(rng.uniform_int(static_cast<std::uint64_t>(n_relations)));
    if (f.head == f.tail) continue;
    if (seen.insert(f).second) g.train.push_back(f);
  }
  for (int i = 0; i < n_valid; ++i)
    g.valid.push_back(g.train[static_cast<std::size_t>(i) * 7 % g.train.size()]);
  // small disjoint-from-valid test copy, unused by the benchmark
  for (int i = 0; i < 5; ++i) g.test.push_back(g.train[static_cast<std::size_t>(i) * 11 % g.train.size()]);
  return g;
}

// Compositional-rule graph: resident_of(person, country) holds iff
// lives_in(person, city) and located_in(city, country). Descriptions carry
// the bridging link the same way the ICEWS preprocessing bakes sector/country
// into entity text. A fifth of the resident_of facts are held out as test,
// four more as valid; every city keeps at least two resident_of train facts.
struct CompositionalGraph {
  KnowledgeGraph g;
  int n_persons = 40;
  int n_cities = 10;
  int n_countries = 5;
};

inline CompositionalGraph compositional_graph() {
  CompositionalGraph cg;
  KnowledgeGraph& g = cg.g;
  const int P = cg.n_persons, C = cg.n_cities, K = cg.n_countries;
  auto city_of = [C](int person) { return person % C; };
  auto country_of = [K](int city) { return city % K; };

  // entity ids: persons [0,P), cities [P,P+C), countries [P+C,P+C+K)
  for (int i = 0; i < P; ++i)
    g.entities.push_back({static_cast<EntityId>(i), "person " + std::to_string(i),
                          "lives in city " + std::to_string(city_of(i))});
  for (int j = 0; j < C; ++j)
    g.entities.push_back({static_cast<EntityId>(P + j), "city " + std::to_string(j),
                          "located in country " + std::to_string(country_of(j))});
  for (int k = 0; k < K; ++k)
    g.entities.push_back({static_cast<EntityId>(P + C + k), "country " + std::to_string(k),
                          "a nation"});
  g.relation_names = {"lives in", "located in", "resident of"};

  for (int i = 0; i < P; ++i)
    g.train.push_back({static_cast<EntityId>(i), 0, static_cast<EntityId>(P + city_of(i)), {}});
  for (int j = 0; j < C; ++j)
    g.train.push_back(
        {static_cast<EntityId>(P + j), 1, static_cast<EntityId>(P + C + country_of(j)), {}});
  for (int i = 0; i < P; ++i) {
    Fact f{static_cast<EntityId>(i), 2,
           static_cast<EntityId>(P + C + country_of(city_of(i))), {}};
    if (i < 8)
      g.test.push_back(f);  // 8 of 40 = 20% held out
    else if (i < 12)
      g.valid.push_back(f);
    else
      g.train.push_back(f);
  }
  return cg;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle

inline double batch_loss_only(const Seq2SeqParams& p, const std::vector<TrainExample>& batch) {
  double total = 0.0;
  int n = 0;
  for (const TrainExample& ex : batch) {
    ForwardCache cache;
    forward_example(p, ex.enc, ex.dec.input, cache);
    auto [nll, count] = nll_sum(cache, ex.dec.target);
    total += nll;
    n += count;
  }
  return total / n;
}

struct GradCheckReport {
  double max_group_rel_err = 0.0;
  double max_coord_rel_err = 0.0;  // with a small-denominator floor
  std::map<std::string, double> group_rel_err;
};

// Central finite differences over every coordinate of every parameter group.
inline GradCheckReport gradient_check(Seq2SeqParams& params,
                                      const std::vector<TrainExample>& batch,
                                      double h = 1e-4) {
  Seq2SeqParams grads = Seq2SeqParams::zeros(params.config);
  batch_loss_and_grad(params, batch, grads);

  GradCheckReport report;
  auto p_entries = param_entries(params);
  auto g_entries = param_entries(grads);
  for (std::size_t e = 0; e < p_entries.size(); ++e) {
    Mat& theta = *p_entries[e].mat;
    const Mat& g = *g_entries[e].mat;
    double num2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t i = 0; i < theta.a.size(); ++i) {
      const double keep = theta.a[i];
      theta.a[i] = keep + h;
      const double up = batch_loss_only(params, batch);
      theta.a[i] = keep - h;
      const double down = batch_loss_only(params, batch);
      theta.a[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = g.a[i];
      num2 += (an - fd) * (an - fd);
      a2 += an * an;
      f2 += fd * fd;
      const double coord_rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      report.max_coord_rel_err = std::max(report.max_coord_rel_err, coord_rel);
    }
    const double rel =
        std::sqrt(num2) / std::max({std::sqrt(a2), std::sqrt(f2), 1e-12});
    report.group_rel_err[p_entries[e].name] = rel;
    report.max_group_rel_err = std::max(report.max_group_rel_err, rel);
  }
  return report;
}

// A small but structurally complete gradient-check workload: two examples,
// different relations, a dropped encoder bit and a padded decoder tail.
inline std::pair<ModelConfig, std::vector<TrainExample>> gradcheck_workload(
    std::uint64_t seed = 7) {
  Rng rng(seed);
  KnowledgeGraph g = random_graph(rng, 4, 3, 2, 4);
  Vocab v = build_vocab(g, 8);

  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 16;
  cfg.max_len = 32;
  cfg.vocab_size = v.size();
  cfg.n_relations = g.num_relations();
  cfg.seed = seed;

  std::vector<TrainExample> batch;
  for (int i = 0; i < 2; ++i) {
    const Fact& f = g.train[static_cast<std::size_t>(i)];
    const Direction dir = i == 0 ? Direction::Tail : Direction::Head;
    VerbalizedQuery q = verbalize_query(g, v, query_from_fact(f, dir), 8, cfg.max_len);
    TrainExample ex;
    ex.enc.tokens = q.tokens;
    ex.enc.attn = q.attn;
    ex.enc.rel = q.rel;
    // drop one maskable bit to exercise the masked-attention gradient path
    for (std::size_t t = 0; t < q.maskable.size(); ++t)
      if (q.maskable[t]) {
        ex.enc.attn[t] = 0;
        break;
      }
    ex.dec = teacher_from_answer(verbalize_answer(g, v, fact_answer(f, dir), 8));
    batch.push_back(std::move(ex));
  }
  // pad one decoder tail so the loss-ignore path is differentiated too
  batch[0].dec.input.push_back(Vocab::kPad);
  batch[0].dec.target.push_back(Vocab::kPad);
  return {cfg, batch};
}

}  // namespace kgs2s::test
