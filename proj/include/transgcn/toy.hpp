#pragma once

// Synthetic kinship graph: 104 people in 4 clans of 2 families x 13 people
// over three generations (2 / 5 / 6 per family). Every ordered pair of
// clan-mates carries exactly one of 10 kin terms fixed by relative
// generation, family membership and the gender of the second person, so
// terms compose (father_line of father_line is grandkin, and so on). A seeded
// sample of the 2,600 labeled pairs is split 1,500 / 150 / 150.

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "transgcn/kg.hpp"

namespace transgcn::toy {

inline constexpr std::size_t kClans = 4;
inline constexpr std::size_t kFamiliesPerClan = 2;
inline constexpr std::array<std::size_t, 3> kGenerationSizes{2, 5, 6};
inline constexpr std::size_t kTrain = 1500;
inline constexpr std::size_t kValid = 150;
inline constexpr std::size_t kTest = 150;

inline const std::array<const char*, 10>& kin_terms() {
  static const std::array<const char*, 10> terms{"father_line", "mother_line",  "son_line",       "daughter_line",
                                                  "brother",     "sister",       "grandkin",       "spouse_class",
                                                  "sibling_in_law", "affine"};
  return terms;
}

struct Person {
  std::string name;
  std::size_t clan = 0;
  std::size_t family = 0;
  int generation = 0;
  bool male = false;
};

inline std::vector<Person> people(std::mt19937_64& rng) {
  std::vector<Person> out;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t c = 0; c < kClans; ++c) {
    for (std::size_t f = 0; f < kFamiliesPerClan; ++f) {
      std::size_t idx = 0;
      for (std::size_t g = 0; g < kGenerationSizes.size(); ++g) {
        for (std::size_t k = 0; k < kGenerationSizes[g]; ++k, ++idx) {
          std::ostringstream name;
          name << "c" << c << "f" << f << "_p" << std::setw(2) << std::setfill('0') << idx;
          // The founding couple is one man and one woman.
          const bool male = g == 0 ? k == 0 : coin(rng);
          out.push_back({name.str(), c, c * kFamiliesPerClan + f, static_cast<int>(g), male});
        }
      }
    }
  }
  return out;
}

/// Kin term index of y as seen from x (same clan, x != y).
inline std::size_t kin_term(const Person& x, const Person& y) {
  const int dg = y.generation - x.generation;
  if (x.family == y.family) {
    if (dg == -1) return y.male ? 0 : 1;
    if (dg == 1) return y.male ? 2 : 3;
    if (dg == 0) return y.male ? 4 : 5;
    return 6;
  }
  if (dg == 0) return y.male != x.male ? 7 : 8;
  return 9;
}

/// Deterministic kinship graph for a seed.
inline KnowledgeGraph generate_kinship(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto persons = people(rng);
  std::vector<NamedTriple> all;
  for (const auto& x : persons)
    for (const auto& y : persons)
      if (&x != &y && x.clan == y.clan) all.push_back({x.name, kin_terms()[kin_term(x, y)], y.name});
  std::shuffle(all.begin(), all.end(), rng);

  std::vector<NamedTriple> train(all.begin(), all.begin() + kTrain);
  std::vector<NamedTriple> valid(all.begin() + kTrain, all.begin() + kTrain + kValid);
  std::vector<NamedTriple> test(all.begin() + kTrain + kValid, all.begin() + kTrain + kValid + kTest);

  // Fix entity ids to the person order and relation ids to the term order.
  Vocabulary entities, relations;
  for (const auto& p : persons) entities.intern(p.name);
  for (const char* t : kin_terms()) relations.intern(t);
  auto remap = [&](const std::vector<NamedTriple>& v) {
    std::vector<Triple> out;
    for (const auto& t : v) {
      out.push_back({*entities.find(t.head), *relations.find(t.relation), *entities.find(t.tail)});
    }
    return out;
  };
  return KnowledgeGraph::from_ids(entities, relations, remap(train), remap(valid), remap(test));
}

}  // namespace transgcn::toy
