#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kgs2s/graph.hpp"
#include "kgs2s/vocab.hpp"

namespace kgs2s {

// Token ids plus a parallel attention-mask bit per position (1 = attend).
struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attn;
};

// A query rendered as flat text. `maskable` marks the positions eligible for
// Seq2Seq dropout: name, description and meta tokens only, never the special
// tokens or the soft-prompt placeholders.
struct VerbalizedQuery {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> attn;
  std::vector<std::uint8_t> maskable;
  RelationId rel = 0;
};

// (h, r, ?, m) with dir=Tail and known=h, or (?, r, t, m) with dir=Head and
// known=t.
struct QuerySpec {
  Direction dir = Direction::Tail;
  EntityId known = 0;
  RelationId rel = 0;
  Meta meta;
};

inline QuerySpec query_from_fact(const Fact& f, Direction dir) {
  return {dir, dir == Direction::Tail ? f.head : f.tail, f.rel, f.meta};
}

inline EntityId fact_answer(const Fact& f, Direction dir) {
  return dir == Direction::Tail ? f.tail : f.head;
}

inline QueryKey query_key(const QuerySpec& q) { return {q.dir, q.known, q.rel, q.meta}; }

// Query layout, tail direction:
//   <bos> <p1> h.name <lb> h.desc <rb> <p2> | <p3> r.name <p4> | <mask> [| m] <eos>
// Head direction puts the mask block first and the prompted entity block
// last. The description block is omitted entirely when the truncated
// description is empty; the meta block follows the mask slot in both
// directions.
inline VerbalizedQuery verbalize_query(const KnowledgeGraph& g, const Vocab& v,
                                       const QuerySpec& q, int desc_len, int max_len) {
  if (q.known < 0 || q.known >= g.num_entities()) fail("query entity id out of range");
  if (q.rel < 0 || q.rel >= g.num_relations()) fail("query relation id out of range");
  const Entity& e = g.entities[static_cast<std::size_t>(q.known)];

  VerbalizedQuery out;
  out.rel = q.rel;
  auto push = [&out](TokenId id, bool maskable) {
    out.tokens.push_back(id);
    out.attn.push_back(1);
    out.maskable.push_back(maskable ? 1 : 0);
  };
  auto push_text = [&](const std::vector<std::string>& words) {
    for (const std::string& w : words) push(v.id(w), true);
  };

  auto push_entity_block = [&] {
    push(Vocab::kP1, false);
    push_text(split_ws(e.name));
    auto desc = first_words(e.description, desc_len);
    if (!desc.empty()) {
      push(Vocab::kLb, false);
      push_text(desc);
      push(Vocab::kRb, false);
    }
    push(Vocab::kP2, false);
  };
  auto push_relation_block = [&] {
    push(Vocab::kP3, false);
    push_text(split_ws(g.relation_names[static_cast<std::size_t>(q.rel)]));
    push(Vocab::kP4, false);
  };
  auto push_mask_block = [&] {
    push(Vocab::kMask, false);
    if (q.meta.kind != MetaKind::None) {
      push(Vocab::kSep, false);
      push_text(split_ws(q.meta.text));
    }
  };

  push(Vocab::kBos, false);
  if (q.dir == Direction::Tail) {
    push_entity_block();
    push(Vocab::kSep, false);
    push_relation_block();
    push(Vocab::kSep, false);
    push_mask_block();
  } else {
    push_mask_block();
    push(Vocab::kSep, false);
    push_relation_block();
    push(Vocab::kSep, false);
    push_entity_block();
  }
  push(Vocab::kEos, false);

  if (static_cast<int>(out.tokens.size()) > max_len)
    fail("verbalized query length " + std::to_string(out.tokens.size()) +
         " exceeds max_len " + std::to_string(max_len));
  return out;
}

// Answer layout: <bos> <mask> name <lb> desc <rb> <eos>, description block
// omitted when empty.
inline TokenSeq verbalize_answer(const KnowledgeGraph& g, const Vocab& v, EntityId entity,
                                 int desc_len) {
  if (entity < 0 || entity >= g.num_entities()) fail("answer entity id out of range");
  const Entity& e = g.entities[static_cast<std::size_t>(entity)];
  TokenSeq out;
  auto push = [&out](TokenId id) {
    out.ids.push_back(id);
    out.attn.push_back(1);
  };
  push(Vocab::kBos);
  push(Vocab::kMask);
  for (const std::string& w : split_ws(e.name)) push(v.id(w));
  auto desc = first_words(e.description, desc_len);
  if (!desc.empty()) {
    push(Vocab::kLb);
    for (const std::string& w : desc) push(v.id(w));
    push(Vocab::kRb);
  }
  push(Vocab::kEos);
  return out;
}

// Recovers the entity-name text from generated tokens: wrapper specials are
// stripped and everything from the first <lb> on (the description) is
// dropped. Returns nullopt when nothing remains.
inline std::optional<std::string> parse_prediction(const Vocab& v,
                                                   const std::vector<TokenId>& ids) {
  std::vector<TokenId> kept;
  for (TokenId id : ids) {
    if (id == Vocab::kLb) break;
    if (id == Vocab::kBos || id == Vocab::kMask || id == Vocab::kEos || id == Vocab::kPad)
      continue;
    kept.push_back(id);
  }
  if (kept.empty()) return std::nullopt;
  return v.detokenize(kept);
}

// Longest entity name in tokens; the generation length budget.
inline int max_entity_name_len(const KnowledgeGraph& g) {
  int best = 0;
  for (const Entity& e : g.entities)
    best = std::max(best, static_cast<int>(split_ws(e.name).size()));
  return best;
}

}  // namespace kgs2s
