#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "transgcn/error.hpp"
#include "transgcn/log.hpp"

namespace transgcn {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t v : {std::uint64_t{t.head}, std::uint64_t{t.relation}, std::uint64_t{t.tail}}) {
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/// One line of a triple file before ids are assigned.
struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;
};

/// Reads `head<TAB>relation<TAB>tail` lines in file order. Blank lines are
/// skipped and a trailing `\r` is stripped.
inline std::vector<NamedTriple> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<NamedTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_no << ": expected 3 tab-separated fields";
      throw ParseError(msg.str());
    }
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return out;
}

/// Reads `id<TAB>name` lines with ids 0, 1, 2, ... in order.
inline std::vector<std::string> load_dict(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != std::to_string(names.size())) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_no << ": expected '" << names.size() << "<TAB>name'";
      throw ParseError(msg.str());
    }
    names.push_back(line.substr(tab + 1));
  }
  return names;
}

/// Bidirectional name <-> dense id map; ids follow first insertion.
class Vocabulary {
 public:
  std::uint32_t intern(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::uint32_t> find(std::string_view name) const {
    auto it = ids_.find(std::string(name));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  static Vocabulary from_names(const std::vector<std::string>& names) {
    Vocabulary v;
    for (const auto& n : names) {
      if (v.find(n)) throw FormatError("duplicate vocabulary entry '" + n + "'");
      v.intern(n);
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

enum class Split { train, valid, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  return std::nullopt;
}

/// Vocabularies plus the three triple splits. Ids are assigned by first
/// appearance scanning train, then valid, then test.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  static KnowledgeGraph from_named(const std::vector<NamedTriple>& train, const std::vector<NamedTriple>& valid,
                                   const std::vector<NamedTriple>& test, Vocabulary entities = {},
                                   Vocabulary relations = {}) {
    KnowledgeGraph kg;
    kg.entities_ = std::move(entities);
    kg.relations_ = std::move(relations);
    kg.train_ = kg.intern_all(train);
    kg.valid_ = kg.intern_all(valid);
    kg.test_ = kg.intern_all(test);
    for (Split s : {Split::train, Split::valid, Split::test}) {
      if (std::size_t dups = count_duplicates(kg.split(s)); dups > 0) {
        log::warn(dups, " duplicate triple(s) in ", split_name(s), " split kept as parallel edges");
      }
    }
    return kg;
  }

  /// Assembles a graph from id-level data and checks every id.
  static KnowledgeGraph from_ids(Vocabulary entities, Vocabulary relations, std::vector<Triple> train,
                                 std::vector<Triple> valid, std::vector<Triple> test) {
    KnowledgeGraph kg;
    kg.entities_ = std::move(entities);
    kg.relations_ = std::move(relations);
    kg.train_ = std::move(train);
    kg.valid_ = std::move(valid);
    kg.test_ = std::move(test);
    kg.validate();
    return kg;
  }

  /// Loads `train.txt`, `valid.txt`, `test.txt` from a directory. Optional
  /// `entities.dict` / `relations.dict` files fix the vocabulary and its ids,
  /// including names no triple mentions.
  static KnowledgeGraph load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ParseError("dataset directory not found: " + dir.string());
    auto dict = [&](const char* name) {
      const auto p = dir / name;
      return std::filesystem::exists(p) ? Vocabulary::from_names(load_dict(p)) : Vocabulary{};
    };
    return from_named(load_tsv(dir / "train.txt"), load_tsv(dir / "valid.txt"), load_tsv(dir / "test.txt"),
                      dict("entities.dict"), dict("relations.dict"));
  }

  void validate() const {
    for (Split s : {Split::train, Split::valid, Split::test}) {
      for (const Triple& t : split(s)) {
        if (t.head >= num_entities() || t.tail >= num_entities() || t.relation >= num_relations()) {
          std::ostringstream msg;
          msg << "triple (" << t.head << "," << t.relation << "," << t.tail << ") in " << split_name(s)
              << " references an unknown id";
          throw IndexError(msg.str());
        }
      }
    }
  }

  /// Writes a split back as TSV using the stored names.
  void write_tsv(Split s, const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path.string());
    for (const Triple& t : split(s)) {
      out << entities_.name(t.head) << '\t' << relations_.name(t.relation) << '\t' << entities_.name(t.tail) << '\n';
    }
  }

  void write_directory(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_tsv(Split::train, dir / "train.txt");
    write_tsv(Split::valid, dir / "valid.txt");
    write_tsv(Split::test, dir / "test.txt");
  }

  const std::vector<Triple>& split(Split s) const {
    switch (s) {
      case Split::train: return train_;
      case Split::valid: return valid_;
      case Split::test: return test_;
    }
    return train_;
  }
  const std::vector<Triple>& train() const { return train_; }
  const std::vector<Triple>& valid() const { return valid_; }
  const std::vector<Triple>& test() const { return test_; }

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }

 private:
  std::vector<Triple> intern_all(const std::vector<NamedTriple>& named) {
    std::vector<Triple> out;
    out.reserve(named.size());
    for (const auto& n : named) {
      const EntityId h = entities_.intern(n.head);
      const RelationId r = relations_.intern(n.relation);
      const EntityId t = entities_.intern(n.tail);
      out.push_back({h, r, t});
    }
    return out;
  }

  static std::size_t count_duplicates(const std::vector<Triple>& triples) {
    std::unordered_set<Triple, TripleHash> seen;
    std::size_t dups = 0;
    for (const auto& t : triples) dups += seen.insert(t).second ? 0 : 1;
    return dups;
  }

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> train_, valid_, test_;
};

struct Neighbor {
  EntityId entity = 0;
  RelationId relation = 0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Incoming/outgoing adjacency over one split and the degree constant per entity.
struct NeighborhoodIndex {
  std::vector<std::vector<Neighbor>> incoming;  // (head, relation) of triples ending at i
  std::vector<std::vector<Neighbor>> outgoing;  // (tail, relation) of triples starting at i
  std::vector<std::size_t> degree;
  std::size_t num_relations = 0;

  std::size_t num_entities() const { return degree.size(); }

  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& v : incoming) n += v.size();
    return n;
  }

  /// Index over `triples` for a vocabulary of the given sizes; duplicates
  /// contribute one edge each.
  static NeighborhoodIndex build(const std::vector<Triple>& triples, std::size_t num_entities,
                                 std::size_t num_relations) {
    NeighborhoodIndex idx;
    idx.incoming.resize(num_entities);
    idx.outgoing.resize(num_entities);
    idx.degree.assign(num_entities, 0);
    idx.num_relations = num_relations;
    for (const Triple& t : triples) {
      if (t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations) {
        throw IndexError("triple outside the vocabulary passed to NeighborhoodIndex::build");
      }
      idx.incoming[t.tail].push_back({t.head, t.relation});
      idx.outgoing[t.head].push_back({t.tail, t.relation});
      ++idx.degree[t.tail];
      ++idx.degree[t.head];
    }
    return idx;
  }
};

/// Message passing only ever sees training edges.
inline NeighborhoodIndex build_index(const KnowledgeGraph& kg) {
  return NeighborhoodIndex::build(kg.train(), kg.num_entities(), kg.num_relations());
}

/// Membership over train, valid and test, with per-query answer lists for
/// filtered ranking.
class KnownTriples {
 public:
  KnownTriples() = default;

  explicit KnownTriples(const KnowledgeGraph& kg) {
    for (Split s : {Split::train, Split::valid, Split::test}) {
      for (const Triple& t : kg.split(s)) insert(t);
    }
  }

  void insert(const Triple& t) {
    if (set_.insert(t).second) {
      tails_[key(t.head, t.relation)].push_back(t.tail);
      heads_[key(t.tail, t.relation)].push_back(t.head);
    }
  }

  /// Known tails of (h, r, ?) in insertion order.
  const std::vector<EntityId>& tails_of(EntityId h, RelationId r) const { return lookup(tails_, key(h, r)); }
  /// Known heads of (?, r, t) in insertion order.
  const std::vector<EntityId>& heads_of(RelationId r, EntityId t) const { return lookup(heads_, key(t, r)); }

  bool contains(const Triple& t) const { return set_.count(t) != 0; }
  bool contains(EntityId h, RelationId r, EntityId t) const { return contains(Triple{h, r, t}); }
  std::size_t size() const { return set_.size(); }

 private:
  static std::uint64_t key(EntityId e, RelationId r) { return (std::uint64_t{e} << 32) | r; }

  static const std::vector<EntityId>& lookup(const std::unordered_map<std::uint64_t, std::vector<EntityId>>& m,
                                             std::uint64_t k) {
    static const std::vector<EntityId> empty;
    auto it = m.find(k);
    return it == m.end() ? empty : it->second;
  }

  std::unordered_set<Triple, TripleHash> set_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
};

inline KnownTriples known_triple_set(const KnowledgeGraph& kg) { return KnownTriples(kg); }

}  // namespace transgcn
