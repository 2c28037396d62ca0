#pragma once

// Filtered link-prediction ranking.
//
// For a query (h, r, ?) every other entity e is scored as (h, r, e);
// corruptions that are known triples in any split are dropped, and the true
// tail is ranked against the rest. Exact ties take the mid-rank rounded up:
// rank = 1 + #higher + ceil(#tied / 2).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "transgcn/encoder.hpp"
#include "transgcn/error.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/objective.hpp"
#include "transgcn/parallel.hpp"

namespace transgcn {

enum class Side { head, tail };

/// Rank from raw candidate scores. `filtered[e]` drops candidate e; the true
/// entity is never dropped and never counted against itself.
inline std::size_t rank_from_scores(const std::vector<double>& scores, EntityId truth,
                                    const std::vector<char>* filtered = nullptr) {
  const double true_score = scores.at(truth);
  std::size_t higher = 0, tied = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == truth || (filtered && (*filtered)[e])) continue;
    if (scores[e] > true_score) {
      ++higher;
    } else if (scores[e] == true_score) {
      ++tied;
    }
  }
  return 1 + higher + (tied + 1) / 2;
}

/// Scores of (h, r, e) or (e, r, t) for every entity e.
inline std::vector<double> candidate_scores(const FrozenEmbeddings& emb, const Triple& q, Side side, Norm norm) {
  const std::size_t n = emb.entities.rows();
  if (q.head >= n || q.tail >= n || q.relation >= emb.relations.rows()) {
    throw IndexError("query triple outside the embedding tables");
  }
  std::vector<double> scores(n);
  const auto r = emb.relations.row(q.relation);
  for (std::size_t e = 0; e < n; ++e) {
    const auto cand = emb.entities.row(e);
    scores[e] = side == Side::tail ? score(emb.entities.row(q.head), r, cand, emb.assumption, norm)
                                   : score(cand, r, emb.entities.row(q.tail), emb.assumption, norm);
  }
  return scores;
}

inline std::vector<char> filter_mask(std::size_t num_entities, const Triple& q, Side side, const KnownTriples& known) {
  std::vector<char> mask(num_entities, 0);
  const auto& answers = side == Side::tail ? known.tails_of(q.head, q.relation) : known.heads_of(q.relation, q.tail);
  for (EntityId e : answers) mask[e] = 1;
  return mask;
}

inline std::size_t filtered_rank(const FrozenEmbeddings& emb, const Triple& q, Side side, const KnownTriples& known,
                                 Norm norm) {
  const auto scores = candidate_scores(emb, q, side, norm);
  const auto mask = filter_mask(scores.size(), q, side, known);
  return rank_from_scores(scores, side == Side::tail ? q.tail : q.head, &mask);
}

inline std::size_t raw_rank(const FrozenEmbeddings& emb, const Triple& q, Side side, Norm norm) {
  return rank_from_scores(candidate_scores(emb, q, side, norm), side == Side::tail ? q.tail : q.head);
}

struct QueryRank {
  Triple triple;
  Side side = Side::tail;
  std::size_t rank = 0;

  EntityId target() const { return side == Side::tail ? triple.tail : triple.head; }
};

struct DegreeBucket {
  std::size_t lo = 0;  // inclusive
  std::size_t hi = 0;  // exclusive
  std::size_t count = 0;
  double mrr = 0.0;
};

struct RankingReport {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::vector<QueryRank> ranks;  // head-side and tail-side query per triple, in split order
  std::vector<DegreeBucket> buckets;

  std::size_t num_queries() const { return ranks.size(); }
};

/// MRR and Hits@{1,3,10} over a rank list.
inline void summarize(RankingReport& report) {
  if (report.ranks.empty()) throw StateError("cannot summarize an empty ranking");
  double rr = 0.0;
  std::size_t h1 = 0, h3 = 0, h10 = 0;
  for (const auto& q : report.ranks) {
    rr += 1.0 / static_cast<double>(q.rank);
    h1 += q.rank <= 1;
    h3 += q.rank <= 3;
    h10 += q.rank <= 10;
  }
  const double n = static_cast<double>(report.ranks.size());
  report.mrr = rr / n;
  report.hits1 = static_cast<double>(h1) / n;
  report.hits3 = static_cast<double>(h3) / n;
  report.hits10 = static_cast<double>(h10) / n;
}

/// Filtered ranks of both sides of every triple in `triples`.
inline RankingReport evaluate_triples(const std::vector<Triple>& triples, const FrozenEmbeddings& emb,
                                      const KnownTriples& known, Norm norm, std::size_t threads = 1) {
  if (triples.empty()) throw StateError("evaluation split is empty");
  RankingReport report;
  report.ranks.resize(2 * triples.size());
  parallel_for(triples.size(), threads, [&](std::size_t i) {
    const Triple& t = triples[i];
    report.ranks[2 * i] = {t, Side::head, filtered_rank(emb, t, Side::head, known, norm)};
    report.ranks[2 * i + 1] = {t, Side::tail, filtered_rank(emb, t, Side::tail, known, norm)};
  });
  summarize(report);
  return report;
}

inline RankingReport evaluate(const KnowledgeGraph& kg, Split split, const FrozenEmbeddings& emb,
                              const KnownTriples& known, Norm norm, std::size_t threads = 1) {
  return evaluate_triples(kg.split(split), emb, known, norm, threads);
}

/// Bucket index of a degree: 0 for degree 0, else 1 + floor(log2(degree)).
inline std::size_t degree_bucket_of(std::size_t degree) {
  std::size_t b = 0;
  while (degree > 0) {
    ++b;
    degree >>= 1;
  }
  return b;
}

/// Per-bucket MRR keyed by the degree of the entity being predicted. Bucket
/// edges are 0, 1, 2, 4, 8, ...; empty buckets are omitted.
inline std::vector<DegreeBucket> degree_bucket_report(const RankingReport& report, const NeighborhoodIndex& index) {
  std::vector<DegreeBucket> all;
  std::vector<double> rr;
  for (const auto& q : report.ranks) {
    const std::size_t b = degree_bucket_of(index.degree.at(q.target()));
    if (b >= all.size()) {
      for (std::size_t k = all.size(); k <= b; ++k) {
        all.push_back({k == 0 ? 0 : (std::size_t{1} << (k - 1)), k == 0 ? 1 : (std::size_t{1} << k), 0, 0.0});
        rr.push_back(0.0);
      }
    }
    ++all[b].count;
    rr[b] += 1.0 / static_cast<double>(q.rank);
  }
  std::vector<DegreeBucket> out;
  for (std::size_t b = 0; b < all.size(); ++b) {
    if (all[b].count == 0) continue;
    all[b].mrr = rr[b] / static_cast<double>(all[b].count);
    out.push_back(all[b]);
  }
  return out;
}

}  // namespace transgcn
