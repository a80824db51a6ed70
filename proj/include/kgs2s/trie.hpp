#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kgs2s/common.hpp"
#include "kgs2s/graph.hpp"
#include "kgs2s/vocab.hpp"

namespace kgs2s {

// Token-sequence prefix trie with per-node subtree entity counts. One shared
// trie holds every entity name; per-query blocklist tries are subtracted from
// it at decode time instead of mutating it.
class CountedTrie {
 public:
  struct Node {
    std::map<TokenId, int> children;  // token -> node index; ordered for stable dumps
    std::vector<EntityId> terminals;
    int count = 0;  // entities whose name passes through or ends at this node
  };

  CountedTrie() : nodes_(1) {}

  void insert(const std::vector<TokenId>& tokens, EntityId id) {
    int at = 0;
    std::vector<int> path{0};
    for (TokenId t : tokens) {
      auto it = nodes_[static_cast<std::size_t>(at)].children.find(t);
      if (it == nodes_[static_cast<std::size_t>(at)].children.end()) {
        int fresh = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        nodes_[static_cast<std::size_t>(at)].children.emplace(t, fresh);
        at = fresh;
      } else {
        at = it->second;
      }
      path.push_back(at);
    }
    auto& term = nodes_[static_cast<std::size_t>(at)].terminals;
    if (std::find(term.begin(), term.end(), id) != term.end()) return;
    term.push_back(id);
    for (int n : path) ++nodes_[static_cast<std::size_t>(n)].count;
  }

  // Node index for a prefix, or -1 when the path is absent.
  int find(const std::vector<TokenId>& prefix) const {
    int at = 0;
    for (TokenId t : prefix) {
      auto it = nodes_[static_cast<std::size_t>(at)].children.find(t);
      if (it == nodes_[static_cast<std::size_t>(at)].children.end()) return -1;
      at = it->second;
    }
    return at;
  }

  // Subtree count by node index; -1 (absent path) counts 0.
  int count_at_node(int node) const {
    return node < 0 ? 0 : nodes_[static_cast<std::size_t>(node)].count;
  }

  int count_at(const std::vector<TokenId>& prefix) const { return count_at_node(find(prefix)); }

  const Node& node(int index) const { return nodes_[static_cast<std::size_t>(index)]; }

  int num_inserted() const { return nodes_[0].count; }

  bool empty() const { return nodes_[0].count == 0; }

  // Debug dump for test goldens: preorder, one line per node,
  // depth TAB token TAB count TAB comma-joined terminal ids. Root token is "-".
  std::string dump(const Vocab* v = nullptr) const {
    std::string out;
    dump_node(0, 0, "-", v, out);
    return out;
  }

 private:
  void dump_node(int index, int depth, const std::string& token, const Vocab* v,
                 std::string& out) const {
    const Node& n = nodes_[static_cast<std::size_t>(index)];
    std::vector<EntityId> ids = n.terminals;
    std::sort(ids.begin(), ids.end());
    std::string idtext;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) idtext += ',';
      idtext += std::to_string(ids[i]);
    }
    out += std::to_string(depth) + "\t" + token + "\t" + std::to_string(n.count) + "\t" +
           idtext + "\n";
    for (const auto& [tok, child] : n.children)
      dump_node(child, depth + 1, v ? v->surface(tok) : std::to_string(tok), v, out);
  }

  std::vector<Node> nodes_;
};

inline CountedTrie build_entity_trie(const KnowledgeGraph& g, const Vocab& v) {
  CountedTrie trie;
  for (const Entity& e : g.entities) trie.insert(v.tokenize(e.name), e.id);
  return trie;
}

// Trie over the query's known ground-truth answers, minus the entity under
// evaluation (pass nullopt at training time to block every known answer).
inline CountedTrie build_block_trie(const KnowledgeGraph& g, const Vocab& v,
                                    const KnownTrueIndex& known_true, const QueryKey& key,
                                    std::optional<EntityId> target) {
  CountedTrie trie;
  EntityId excluded = -1;  // ids are non-negative
  if (target.has_value()) excluded = *target;
  for (EntityId id : known_true.answers(key)) {
    if (id == excluded) continue;
    trie.insert(v.tokenize(g.entities[static_cast<std::size_t>(id)].name), id);
  }
  return trie;
}

struct AllowedNext {
  std::vector<TokenId> tokens;  // ascending token id
  bool end_ok = false;          // a non-blocked entity name ends exactly here
};

// Token t is allowed after `prefix` iff some non-blocked entity name extends
// prefix+t; computed as a subtree-count difference so a decode step costs
// O(branching). block_trie may be null.
inline AllowedNext allowed_next(const CountedTrie& entity_trie, const CountedTrie* block_trie,
                                const std::vector<TokenId>& prefix) {
  AllowedNext out;
  int enode = entity_trie.find(prefix);
  if (enode < 0) return out;
  int bnode = block_trie ? block_trie->find(prefix) : -1;

  const auto& echildren = entity_trie.node(enode).children;
  for (const auto& [tok, child] : echildren) {
    int blocked = 0;
    if (bnode >= 0) {
      const auto& bchildren = block_trie->node(bnode).children;
      auto it = bchildren.find(tok);
      if (it != bchildren.end()) blocked = block_trie->count_at_node(it->second);
    }
    if (entity_trie.count_at_node(child) - blocked > 0) out.tokens.push_back(tok);
  }

  int terminals = static_cast<int>(entity_trie.node(enode).terminals.size());
  int blocked_terminals =
      bnode >= 0 ? static_cast<int>(block_trie->node(bnode).terminals.size()) : 0;
  out.end_ok = terminals - blocked_terminals > 0;
  return out;
}

}  // namespace kgs2s
