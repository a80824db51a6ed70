#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgs2s/common.hpp"
#include "kgs2s/graph.hpp"

namespace kgs2s {

// Whitespace-token vocabulary with a fixed block of reserved ids. Replaces
// the pretrained subword tokenizer: names and descriptions are short natural
// language phrases, and a closed vocabulary keeps the generation contract and
// the prefix tries exact.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kSep = 4;  // "|"
  static constexpr TokenId kLb = 5;   // "["
  static constexpr TokenId kRb = 6;   // "]"
  static constexpr TokenId kP1 = 7;
  static constexpr TokenId kP2 = 8;
  static constexpr TokenId kP3 = 9;
  static constexpr TokenId kP4 = 10;
  static constexpr int kNumReserved = 11;

  static const std::array<const char*, kNumReserved>& reserved_surfaces() {
    static const std::array<const char*, kNumReserved> surfaces = {
        "<pad>", "<bos>", "<eos>", "<mask>", "|", "[", "]",
        "<p1>",  "<p2>",  "<p3>",  "<p4>"};
    return surfaces;
  }

  Vocab() {
    for (const char* s : reserved_surfaces()) add(s);
  }

  TokenId add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) fail("unknown token '" + token + "'");
    return it->second;
  }

  const std::string& surface(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<TokenId> tokenize(const std::string& text) const {
    std::vector<TokenId> out;
    for (const std::string& w : split_ws(text)) out.push_back(id(w));
    return out;
  }

  std::string detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += surface(ids[i]);
    }
    return out;
  }

  std::uint64_t digest() const {
    std::string all;
    for (const std::string& t : tokens_) {
      all += t;
      all += '\n';
    }
    return fnv1a64(all);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path.string());
    for (const std::string& t : tokens_) out << t << '\n';
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("missing file: " + path.string());
    Vocab v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno < kNumReserved) {
        if (line != reserved_surfaces()[lineno])
          fail("vocab file " + path.string() + " line " + std::to_string(lineno + 1) +
               ": expected reserved token '" + reserved_surfaces()[lineno] + "', got '" +
               line + "'");
      } else {
        if (line.empty()) fail("vocab file " + path.string() + ": empty token line");
        v.add(line);
      }
      ++lineno;
    }
    if (lineno < kNumReserved) fail("vocab file " + path.string() + ": truncated");
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

inline std::vector<std::string> first_words(const std::string& text, int n) {
  auto words = split_ws(text);
  if (static_cast<int>(words.size()) > n) words.resize(static_cast<std::size_t>(n));
  return words;
}

// Vocabulary over everything the verbalizer can emit: entity names, the
// first desc_len description tokens, relation names and meta texts. Order is
// reserved block first, then first occurrence.
inline Vocab build_vocab(const KnowledgeGraph& g, int desc_len) {
  Vocab v;
  auto add_words = [&v](const std::vector<std::string>& words) {
    for (const std::string& w : words) v.add(w);
  };
  for (const Entity& e : g.entities) {
    for (const std::string& w : split_ws(e.name)) {
      for (const char* s : Vocab::reserved_surfaces())
        if (w == s) fail("entity name '" + e.name + "' contains reserved token '" + w + "'");
      v.add(w);
    }
    add_words(first_words(e.description, desc_len));
  }
  for (const std::string& r : g.relation_names) add_words(split_ws(r));
  for (const std::vector<Fact>* facts : {&g.train, &g.valid, &g.test})
    for (const Fact& f : *facts) add_words(split_ws(f.meta.text));
  return v;
}

}  // namespace kgs2s
