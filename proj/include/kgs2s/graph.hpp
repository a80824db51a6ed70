#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "kgs2s/common.hpp"

namespace kgs2s {

enum class MetaKind { None, Timestamp, Typing };

struct Meta {
  MetaKind kind = MetaKind::None;
  std::string text;

  bool operator==(const Meta& o) const { return kind == o.kind && text == o.text; }
  bool operator<(const Meta& o) const {
    if (kind != o.kind) return kind < o.kind;
    return text < o.text;
  }
};

struct Entity {
  EntityId id = 0;
  std::string name;
  std::string description;
};

struct Fact {
  EntityId head = 0;
  RelationId rel = 0;
  EntityId tail = 0;
  Meta meta;

  bool operator==(const Fact& o) const {
    return head == o.head && rel == o.rel && tail == o.tail && meta == o.meta;
  }
  bool operator<(const Fact& o) const {
    return std::tie(head, rel, tail, meta) < std::tie(o.head, o.rel, o.tail, o.meta);
  }
};

enum class Split { Train, Valid, Test };

struct KnowledgeGraph {
  MetaKind meta_kind = MetaKind::None;
  std::vector<Entity> entities;
  std::vector<std::string> relation_names;
  std::vector<Fact> train;
  std::vector<Fact> valid;
  std::vector<Fact> test;

  int num_entities() const { return static_cast<int>(entities.size()); }
  int num_relations() const { return static_cast<int>(relation_names.size()); }

  const std::vector<Fact>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Valid: return valid;
      default: return test;
    }
  }
};

// ---------------------------------------------------------------------------
// Preprocessing helpers

// ICEWS has no entity descriptions; synthesize one from the sector and
// country columns of the raw dump. Empty fields are skipped.
inline std::string build_icews_description(const std::string& sector,
                                           const std::string& country) {
  if (sector.empty()) return country;
  if (country.empty()) return sector;
  return sector + ", " + country;
}

// NELL surface forms are lower-case; capitalize the first alphabetic
// character of every whitespace-separated word.
inline std::string reformat_nell_name(const std::string& raw) {
  std::string out = raw;
  bool at_word_start = true;
  for (char& c : out) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      at_word_start = true;
    } else if (at_word_start) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      at_word_start = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail("missing file: " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline long parse_int_field(const std::string& s, const std::string& what,
                            const std::filesystem::path& file, std::size_t lineno) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    fail("malformed line " + std::to_string(lineno) + " in " + file.string() +
         ": bad " + what + " '" + s + "'");
  }
  if (pos != s.size() || v < 0)
    fail("malformed line " + std::to_string(lineno) + " in " + file.string() +
         ": bad " + what + " '" + s + "'");
  return v;
}

inline std::vector<Fact> load_fact_file(const std::filesystem::path& file,
                                        MetaKind meta_kind, int num_entities,
                                        int num_relations) {
  const std::size_t want_fields = meta_kind == MetaKind::None ? 3 : 4;
  std::vector<Fact> facts;
  std::set<Fact> seen;
  std::size_t lineno = 0;
  for (const std::string& line : read_lines(file)) {
    ++lineno;
    auto fields = split_on(line, '\t');
    if (fields.size() != want_fields)
      fail("malformed line " + std::to_string(lineno) + " in " + file.string() +
           ": expected " + std::to_string(want_fields) + " fields, got " +
           std::to_string(fields.size()));
    Fact f;
    f.head = static_cast<EntityId>(parse_int_field(fields[0], "head id", file, lineno));
    f.rel = static_cast<RelationId>(parse_int_field(fields[1], "relation id", file, lineno));
    f.tail = static_cast<EntityId>(parse_int_field(fields[2], "tail id", file, lineno));
    f.meta.kind = meta_kind;
    if (meta_kind != MetaKind::None) f.meta.text = fields[3];
    if (f.head >= num_entities || f.tail >= num_entities)
      fail("unknown entity id on line " + std::to_string(lineno) + " in " + file.string());
    if (f.rel >= num_relations)
      fail("unknown relation id on line " + std::to_string(lineno) + " in " + file.string());
    if (!seen.insert(f).second)
      fail("duplicate fact on line " + std::to_string(lineno) + " in " + file.string());
    facts.push_back(f);
  }
  return facts;
}

}  // namespace detail

// Loads entities.tsv, relations.tsv and the three fact splits from data_dir.
// Ids are assigned by file line order and the files must agree with that
// assignment; any mismatch is an error rather than a silent fixup.
inline KnowledgeGraph load_graph(const std::filesystem::path& data_dir, MetaKind meta_kind) {
  KnowledgeGraph g;
  g.meta_kind = meta_kind;

  {
    const auto file = data_dir / "entities.tsv";
    std::set<long> ids;
    std::size_t lineno = 0;
    for (const std::string& line : detail::read_lines(file)) {
      ++lineno;
      auto fields = split_on(line, '\t');
      if (fields.size() != 3)
        fail("malformed line " + std::to_string(lineno) + " in " + file.string() +
             ": expected 3 fields, got " + std::to_string(fields.size()));
      long id = detail::parse_int_field(fields[0], "entity id", file, lineno);
      if (!ids.insert(id).second)
        fail("duplicate entity id " + std::to_string(id) + " in " + file.string());
      if (id != static_cast<long>(lineno) - 1)
        fail("entity id " + std::to_string(id) + " out of order in " + file.string());
      if (trim(fields[1]).empty())
        fail("empty entity name on line " + std::to_string(lineno) + " in " + file.string());
      g.entities.push_back({static_cast<EntityId>(id), fields[1], fields[2]});
    }
  }

  {
    const auto file = data_dir / "relations.tsv";
    std::size_t lineno = 0;
    for (const std::string& line : detail::read_lines(file)) {
      ++lineno;
      auto fields = split_on(line, '\t');
      if (fields.size() != 2)
        fail("malformed line " + std::to_string(lineno) + " in " + file.string() +
             ": expected 2 fields, got " + std::to_string(fields.size()));
      long id = detail::parse_int_field(fields[0], "relation id", file, lineno);
      if (id != static_cast<long>(lineno) - 1)
        fail("duplicate or out-of-order relation id " + std::to_string(id) + " in " +
             file.string());
      g.relation_names.push_back(fields[1]);
    }
  }

  g.train = detail::load_fact_file(data_dir / "train.tsv", meta_kind, g.num_entities(),
                                   g.num_relations());
  g.valid = detail::load_fact_file(data_dir / "valid.tsv", meta_kind, g.num_entities(),
                                   g.num_relations());
  g.test = detail::load_fact_file(data_dir / "test.tsv", meta_kind, g.num_entities(),
                                  g.num_relations());
  return g;
}

// Canonical name form: whitespace runs collapsed to single spaces. Generated
// text is matched against this form.
inline std::string canonical_name(const std::string& name) {
  auto words = split_ws(name);
  return join(words.begin(), words.end(), " ");
}

// Canonical name -> all entity ids carrying it. Lists with more than one id
// are name collisions; prediction mapping scores all of them.
inline std::unordered_map<std::string, std::vector<EntityId>> build_name_index(
    const KnowledgeGraph& g) {
  std::unordered_map<std::string, std::vector<EntityId>> index;
  for (const Entity& e : g.entities) index[canonical_name(e.name)].push_back(e.id);
  return index;
}

inline std::vector<std::vector<EntityId>> name_collisions(const KnowledgeGraph& g) {
  std::vector<std::vector<EntityId>> groups;
  for (auto& [name, ids] : build_name_index(g))
    if (ids.size() > 1) groups.push_back(ids);
  std::sort(groups.begin(), groups.end());
  return groups;
}

// Relations that appear in train as well as in valid/test. Empty means the
// zero-shot split condition holds.
inline std::set<RelationId> validate_zero_shot_split(const KnowledgeGraph& g) {
  std::set<RelationId> train_rels, eval_rels, violations;
  for (const Fact& f : g.train) train_rels.insert(f.rel);
  for (const Fact& f : g.valid) eval_rels.insert(f.rel);
  for (const Fact& f : g.test) eval_rels.insert(f.rel);
  for (RelationId r : eval_rels)
    if (train_rels.count(r)) violations.insert(r);
  return violations;
}

// ---------------------------------------------------------------------------
// Known-true answer index (filtered evaluation, blocklist tries)

// Tail direction answers (h, r, ?, m); Head direction answers (?, r, t, m).
enum class Direction { Head, Tail };

inline const char* direction_name(Direction d) { return d == Direction::Head ? "head" : "tail"; }

struct QueryKey {
  Direction dir = Direction::Tail;
  EntityId known = 0;
  RelationId rel = 0;
  Meta meta;

  bool operator==(const QueryKey& o) const {
    return dir == o.dir && known == o.known && rel == o.rel && meta == o.meta;
  }
};

struct QueryKeyHash {
  std::size_t operator()(const QueryKey& k) const {
    std::uint64_t h = fnv1a64(k.meta.text);
    h ^= static_cast<std::uint64_t>(k.known) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.rel) * 0xC2B2AE3D27D4EB4Full;
    h ^= static_cast<std::uint64_t>(k.dir == Direction::Head ? 1 : 2) << 62;
    h ^= static_cast<std::uint64_t>(k.meta.kind) << 59;
    return static_cast<std::size_t>(h);
  }
};

struct SplitMask {
  bool train = false;
  bool valid = false;
  bool test = false;

  static SplitMask all() { return {true, true, true}; }
  static SplitMask train_only() { return {true, false, false}; }
};

class KnownTrueIndex {
 public:
  const std::set<EntityId>& answers(const QueryKey& key) const {
    auto it = map_.find(key);
    return it == map_.end() ? empty_ : it->second;
  }

  void add_fact(const Fact& f) {
    map_[{Direction::Tail, f.head, f.rel, f.meta}].insert(f.tail);
    map_[{Direction::Head, f.tail, f.rel, f.meta}].insert(f.head);
  }

  std::size_t num_keys() const { return map_.size(); }

 private:
  std::unordered_map<QueryKey, std::set<EntityId>, QueryKeyHash> map_;
  std::set<EntityId> empty_;
};

inline KnownTrueIndex build_known_true_index(const KnowledgeGraph& g, SplitMask splits) {
  KnownTrueIndex index;
  if (splits.train)
    for (const Fact& f : g.train) index.add_fact(f);
  if (splits.valid)
    for (const Fact& f : g.valid) index.add_fact(f);
  if (splits.test)
    for (const Fact& f : g.test) index.add_fact(f);
  return index;
}

}  // namespace kgs2s
