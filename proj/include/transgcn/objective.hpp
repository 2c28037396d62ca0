#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "transgcn/autodiff.hpp"
#include "transgcn/encoder.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/transform.hpp"

namespace transgcn {

enum class Norm { l1, l2 };

inline std::string_view norm_name(Norm n) { return n == Norm::l1 ? "l1" : "l2"; }

inline std::optional<Norm> parse_norm(std::string_view s) {
  if (s == "l1" || s == "L1") return Norm::l1;
  if (s == "l2" || s == "L2") return Norm::l2;
  return std::nullopt;
}

// ---- scoring ----

/// -||est - t|| per row. Under rotation the L1 norm sums complex moduli and
/// the L2 norm is the Euclidean norm of the complex vector.
inline ad::Var distance_score(ad::Var estimate, ad::Var tails, Assumption a, Norm norm) {
  ad::Var diff = ad::sub(estimate, tails);
  ad::Var dist;
  if (norm == Norm::l2) {
    dist = ad::row_l2_norm(diff);
  } else if (a == Assumption::rotation) {
    dist = ad::row_l1_norm(ad::complex_modulus(diff));
  } else {
    dist = ad::row_l1_norm(diff);
  }
  return ad::scale(dist, -1.0);
}

/// Scores (N x 1) of triples against encoded embeddings.
inline ad::Var score_triples(const Encoded& enc, std::span<const Triple> triples, Assumption a, Norm norm) {
  std::vector<std::size_t> heads, rels, tails;
  heads.reserve(triples.size());
  rels.reserve(triples.size());
  tails.reserve(triples.size());
  for (const Triple& t : triples) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  ad::Var est = estimate_from_incoming(ad::gather_rows(enc.entities, std::move(heads)),
                                       ad::gather_rows(enc.relations, std::move(rels)), a);
  return distance_score(est, ad::gather_rows(enc.entities, std::move(tails)), a, norm);
}

/// Plain-double score of one triple from final-layer rows.
inline double score(std::span<const double> h, std::span<const double> r, std::span<const double> t, Assumption a,
                    Norm norm) {
  if (h.size() != r.size() || h.size() != t.size()) throw ShapeError("score: embedding widths differ");
  double acc = 0.0;
  if (a == Assumption::translation) {
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double d = h[j] + r[j] - t[j];
      acc += norm == Norm::l1 ? std::abs(d) : d * d;
    }
  } else {
    if (h.size() % 2 != 0) throw ShapeError("rotation score needs an even width");
    const std::size_t k = h.size() / 2;
    if (norm == Norm::l1) {
      for (std::size_t j = 0; j < k; ++j) {
        const double re = h[j] * r[j] - h[j + k] * r[j + k] - t[j];
        const double im = h[j] * r[j + k] + h[j + k] * r[j] - t[j + k];
        acc += std::hypot(re, im);
      }
    } else {
      // Real parts first, then imaginary parts: the column order of the tape's L2 norm.
      for (std::size_t j = 0; j < k; ++j) {
        const double re = h[j] * r[j] - h[j + k] * r[j + k] - t[j];
        acc += re * re;
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double im = h[j] * r[j + k] + h[j + k] * r[j] - t[j + k];
        acc += im * im;
      }
    }
  }
  return -(norm == Norm::l1 ? acc : std::sqrt(acc));
}

// ---- negative sampling ----

/// SplitMix64 finalizer; combines a root seed with stream coordinates.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return step(step(step(root) ^ a) ^ b);
}

using Rng = std::mt19937_64;

/// `n` corruptions of `positive`, each replacing the head or the tail
/// (chosen uniformly) by a uniformly drawn different entity. With a filter,
/// corruptions that are known triples are redrawn up to `max_retries` times.
inline std::vector<Triple> sample_negatives(const Triple& positive, std::size_t n, std::size_t num_entities, Rng& rng,
                                            const KnownTriples* filter = nullptr, int max_retries = 10) {
  if (num_entities < 2) throw IndexError("negative sampling needs at least two entities");
  std::vector<Triple> out;
  out.reserve(n);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(num_entities - 2));
  for (std::size_t i = 0; i < n; ++i) {
    Triple neg;
    for (int attempt = 0;; ++attempt) {
      neg = positive;
      const bool corrupt_head = coin(rng) == 0;
      const EntityId original = corrupt_head ? positive.head : positive.tail;
      EntityId e = pick(rng);
      if (e >= original) ++e;  // uniform over the other entities
      (corrupt_head ? neg.head : neg.tail) = e;
      if (filter == nullptr || attempt >= max_retries || !filter->contains(neg)) break;
    }
    out.push_back(neg);
  }
  return out;
}

// ---- losses, single positive ----

/// Sum over negatives of max(0, f(neg) - f(pos) + gamma).
inline double margin_loss(double pos_score, std::span<const double> neg_scores, double gamma) {
  double loss = 0.0;
  for (double s : neg_scores) loss += std::max(0.0, -pos_score + s + gamma);
  return loss;
}

/// softmax(alpha * scores) with max subtraction.
inline std::vector<double> self_adv_weights(std::span<const double> neg_scores, double alpha) {
  if (neg_scores.empty()) throw ShapeError("self_adv_weights needs at least one negative");
  double mx = alpha * neg_scores[0];
  for (double s : neg_scores) mx = std::max(mx, alpha * s);
  std::vector<double> w(neg_scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp(alpha * neg_scores[i] - mx));
  for (double& x : w) x /= z;
  return w;
}

/// -log sigmoid(gamma + f(pos)) - sum_i p_i log sigmoid(-f(neg_i) - gamma).
inline double self_adv_loss(double pos_score, std::span<const double> neg_scores, std::span<const double> weights,
                            double gamma) {
  if (weights.size() != neg_scores.size()) throw ShapeError("self_adv_loss: one weight per negative required");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw NumericError("self_adv_loss: weights must sum to 1");
  double loss = -ad::stable_log_sigmoid(gamma + pos_score);
  for (std::size_t i = 0; i < weights.size(); ++i) loss -= weights[i] * ad::stable_log_sigmoid(-neg_scores[i] - gamma);
  return loss;
}

// ---- losses, batched on the tape (mean over positives) ----

namespace detail {
inline std::vector<std::size_t> repeat_rows(std::size_t batch, std::size_t n) {
  std::vector<std::size_t> ids;
  ids.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < n; ++j) ids.push_back(b);
  return ids;
}
}  // namespace detail

/// pos: B x 1, neg: B x n. Mean over positives of the per-positive margin loss.
inline ad::Var margin_loss(ad::Var pos, ad::Var neg, double gamma) {
  const std::size_t batch = pos.rows(), n = neg.cols();
  if (pos.cols() != 1 || neg.rows() != batch) throw ShapeError("margin_loss: expected B x 1 and B x n scores");
  ad::Var pos_rep = ad::gather_rows(pos, detail::repeat_rows(batch, n));
  ad::Var neg_flat = ad::reshape(neg, batch * n, 1);
  ad::Var hinge = ad::relu(ad::add_scalar(ad::sub(neg_flat, pos_rep), gamma));
  return ad::scale(ad::sum(hinge), 1.0 / static_cast<double>(batch));
}

/// Detached softmax(alpha * neg) per row.
inline ad::Var self_adv_weights(ad::Var neg, double alpha) {
  return ad::detach(ad::softmax_over_scores(ad::scale(neg, alpha)));
}

/// pos: B x 1, neg and weights: B x n. Mean over positives.
inline ad::Var self_adv_loss(ad::Var pos, ad::Var neg, ad::Var weights, double gamma) {
  const std::size_t batch = pos.rows();
  if (pos.cols() != 1 || neg.rows() != batch || !weights.value().same_shape(neg.value())) {
    throw ShapeError("self_adv_loss: expected B x 1, B x n and B x n");
  }
  ad::Var pos_term = ad::sum(ad::log_sigmoid(ad::add_scalar(pos, gamma)));
  ad::Var neg_term = ad::sum(ad::hadamard(weights, ad::log_sigmoid(ad::add_scalar(ad::scale(neg, -1.0), -gamma))));
  return ad::scale(ad::add(pos_term, neg_term), -1.0 / static_cast<double>(batch));
}

}  // namespace transgcn
