#pragma once

// Shared test helpers: random data, a finite-difference gradient oracle and
// straight-line reference implementations that do not touch the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "transgcn/transgcn.hpp"

namespace testsupport {

using transgcn::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = u(rng);
  return m;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

/// Compares analytic gradients against central differences. `f` rebuilds the
/// computation from `params` on `tape` and returns the 1x1 loss. A coordinate
/// whose one-sided differences disagree is sitting on a kink (relu, |x|,
/// hinge) and is skipped; the count is reported.
inline GradCheck check_gradients(std::vector<Matrix> params,
                                 const std::function<transgcn::ad::Var(transgcn::ad::Tape&,
                                                                       const std::vector<transgcn::ad::Var>&)>& f,
                                 double step = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  using namespace transgcn;
  auto eval = [&](const std::vector<Matrix>& p) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& m : p) vars.push_back(tape.leaf(m, false));
    return f(tape, vars).value()(0, 0);
  };
  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& m : params) vars.push_back(tape.leaf(m));
    ad::Var loss = f(tape, vars);
    tape.backward(loss);
    for (ad::Var v : vars) analytic.push_back(v.grad());
  }
  const double f0 = eval(params);
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x = params[p].data()[i];
      params[p].data()[i] = x + step;
      const double fp = eval(params);
      params[p].data()[i] = x - step;
      const double fm = eval(params);
      params[p].data()[i] = x;
      const double right = (fp - f0) / step, left = (f0 - fm) / step;
      const double central = (fp - fm) / (2.0 * step);
      if (std::abs(right - left) > 1e-3 * std::max({1.0, std::abs(right), std::abs(left)})) {
        ++out.skipped_kinks;
        continue;
      }
      ++out.checked;
      const double a = analytic[p].data()[i];
      const double diff = std::abs(a - central);
      const double rel = diff / std::max({std::abs(a), std::abs(central), 1e-300});
      if (diff > abs_floor) out.max_rel_error = std::max(out.max_rel_error, rel);
      if (diff > abs_floor && rel > rel_tol) {
        if (out.failures++ == 0) {
          out.first_failure = "param " + std::to_string(p) + " coord " + std::to_string(i) +
                              ": analytic " + std::to_string(a) + " numeric " + std::to_string(central);
        }
      }
    }
  }
  return out;
}

/// Random graph over `num_entities` entities with distinct triples, no self loops.
inline transgcn::KnowledgeGraph random_kg(std::size_t num_entities, std::size_t num_relations, std::size_t n_train,
                                          std::size_t n_valid, std::size_t n_test, std::mt19937_64& rng) {
  using namespace transgcn;
  std::uniform_int_distribution<std::uint32_t> ent(0, static_cast<std::uint32_t>(num_entities - 1));
  std::uniform_int_distribution<std::uint32_t> rel(0, static_cast<std::uint32_t>(num_relations - 1));
  std::set<Triple> seen;
  std::vector<Triple> all;
  const std::size_t want = n_train + n_valid + n_test;
  for (std::size_t guard = 0; all.size() < want && guard < 100000; ++guard) {
    Triple t{ent(rng), rel(rng), ent(rng)};
    if (t.head == t.tail || !seen.insert(t).second) continue;
    all.push_back(t);
  }
  Vocabulary ents, rels;
  for (std::size_t i = 0; i < num_entities; ++i) ents.intern("e" + std::to_string(i));
  for (std::size_t i = 0; i < num_relations; ++i) rels.intern("r" + std::to_string(i));
  std::vector<Triple> train(all.begin(), all.begin() + std::min(n_train, all.size()));
  std::vector<Triple> valid(all.begin() + train.size(), all.begin() + std::min(n_train + n_valid, all.size()));
  std::vector<Triple> test(all.begin() + train.size() + valid.size(), all.end());
  return KnowledgeGraph::from_ids(ents, rels, train, valid, test);
}

/// Model state with every parameter uniform in [-1, 1] (phases in [0, 2pi)).
inline transgcn::ModelState random_state(transgcn::Assumption a, std::size_t num_entities,
                                         std::size_t num_relations, std::size_t dim, std::size_t layers,
                                         std::mt19937_64& rng) {
  using namespace transgcn;
  ModelState s;
  s.assumption = a;
  s.dim = dim;
  s.entity_embed = random_matrix(num_entities, dim, rng);
  s.relation_params = a == Assumption::rotation ? random_matrix(num_relations, dim / 2, rng, 0.0, 6.283185307179586)
                                                : random_matrix(num_relations, dim, rng);
  for (std::size_t l = 0; l < layers; ++l) s.layers.push_back({random_matrix(dim, dim, rng), random_matrix(dim, dim, rng)});
  return s;
}

// ---- straight-line reference model ----

using Vec = std::vector<double>;

inline Vec row_of(const Matrix& m, std::size_t i) {
  auto r = m.row(i);
  return Vec(r.begin(), r.end());
}

/// Base-model score written out coordinate by coordinate.
inline double ref_score(const Vec& h, const Vec& r, const Vec& t, transgcn::Assumption a, transgcn::Norm norm) {
  const bool l1 = norm == transgcn::Norm::l1;
  if (a == transgcn::Assumption::translation) {
    double s = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double d = h[j] + r[j] - t[j];
      s += l1 ? std::abs(d) : d * d;
    }
    return l1 ? -s : -std::sqrt(s);
  }
  const std::size_t k = h.size() / 2;
  Vec re(k), im(k);
  for (std::size_t j = 0; j < k; ++j) {
    re[j] = h[j] * r[j] - h[k + j] * r[k + j] - t[j];
    im[j] = h[j] * r[k + j] + h[k + j] * r[j] - t[k + j];
  }
  double s = 0.0;
  if (l1) {
    for (std::size_t j = 0; j < k; ++j) s += std::hypot(re[j], im[j]);
    return -s;
  }
  for (double x : re) s += x * x;
  for (double x : im) s += x * x;
  return -std::sqrt(s);
}

struct RefEmbeddings {
  std::vector<Vec> entities;
  std::vector<Vec> relations;
};

/// Layer-0 embeddings of a state: raw entity rows and [cos|sin] of phases.
inline RefEmbeddings ref_layer0(const transgcn::ModelState& s) {
  RefEmbeddings e;
  for (std::size_t i = 0; i < s.entity_embed.rows(); ++i) e.entities.push_back(row_of(s.entity_embed, i));
  for (std::size_t i = 0; i < s.relation_params.rows(); ++i) {
    Vec r = row_of(s.relation_params, i);
    if (s.assumption == transgcn::Assumption::rotation) {
      const std::size_t k = r.size();
      Vec z(2 * k);
      for (std::size_t j = 0; j < k; ++j) {
        z[j] = std::cos(r[j]);
        z[k + j] = std::sin(r[j]);
      }
      r = z;
    }
    e.relations.push_back(r);
  }
  return e;
}

inline Vec matvec(const Matrix& w, const Vec& x) {
  Vec y(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) y[i] += w(i, j) * x[j];
  return y;
}

/// One encoder layer computed per entity from an edge list.
inline RefEmbeddings ref_layer(const RefEmbeddings& in, const transgcn::LayerParams& p,
                               const std::vector<transgcn::Triple>& edges, transgcn::Assumption a,
                               transgcn::Activation act = transgcn::Activation::relu) {
  const bool relu = act == transgcn::Activation::relu;
  const std::size_t n = in.entities.size(), d = in.entities.empty() ? 0 : in.entities[0].size();
  const bool rot = a == transgcn::Assumption::rotation;
  const std::size_t k = d / 2;
  auto times = [&](const Vec& v, const Vec& r, bool conj) {
    Vec o(d);
    if (!rot) {
      for (std::size_t j = 0; j < d; ++j) o[j] = conj ? v[j] - r[j] : v[j] + r[j];
      return o;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double rr = r[j], ri = conj ? -r[k + j] : r[k + j];
      o[j] = v[j] * rr - v[k + j] * ri;
      o[k + j] = v[j] * ri + v[k + j] * rr;
    }
    return o;
  };
  std::vector<Vec> acc(n, Vec(d, 0.0));
  std::vector<std::size_t> deg(n, 0);
  for (const auto& e : edges) {
    // The tail is estimated from its head, the head from its tail.
    Vec to_tail = times(in.entities[e.head], in.relations[e.relation], false);
    Vec to_head = times(in.entities[e.tail], in.relations[e.relation], true);
    for (std::size_t j = 0; j < d; ++j) {
      acc[e.tail][j] += to_tail[j];
      acc[e.head][j] += to_head[j];
    }
    ++deg[e.tail];
    ++deg[e.head];
  }
  RefEmbeddings out;
  for (std::size_t i = 0; i < n; ++i) {
    Vec m(d, 0.0);
    if (deg[i] > 0) {
      Vec scaled = acc[i];
      for (double& x : scaled) x /= static_cast<double>(deg[i]);
      m = matvec(p.w0, scaled);
    }
    Vec v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = relu ? std::max(0.0, m[j] + in.entities[i][j]) : m[j] + in.entities[i][j];
    out.entities.push_back(v);
  }
  for (const Vec& r : in.relations) {
    Vec y = matvec(p.w1, r);
    if (relu)
      for (double& x : y) x = std::max(0.0, x);
    if (rot) {
      for (std::size_t j = 0; j < k; ++j) {
        const double mod = std::hypot(y[j], y[k + j]);
        if (mod < 1e-12) {
          y[j] = 1.0;
          y[k + j] = 0.0;
        } else {
          y[j] /= mod;
          y[k + j] /= mod;
        }
      }
    }
    out.relations.push_back(y);
  }
  return out;
}

inline RefEmbeddings ref_encode(const transgcn::ModelState& s, const std::vector<transgcn::Triple>& edges) {
  RefEmbeddings e = ref_layer0(s);
  for (const auto& p : s.layers) e = ref_layer(e, p, edges, s.assumption, s.activation);
  return e;
}

/// Filtered rank by exhaustive comparison of every candidate against the
/// full set of known triples.
inline std::size_t brute_force_rank(const RefEmbeddings& emb, const transgcn::Triple& q, bool tail_side,
                                    const std::set<transgcn::Triple>& known, transgcn::Assumption a,
                                    transgcn::Norm norm) {
  const double truth = ref_score(emb.entities[q.head], emb.relations[q.relation], emb.entities[q.tail], a, norm);
  std::size_t higher = 0, tied = 0;
  for (std::uint32_t e = 0; e < emb.entities.size(); ++e) {
    transgcn::Triple c = q;
    (tail_side ? c.tail : c.head) = e;
    if (c == q || known.count(c)) continue;
    const double s = ref_score(emb.entities[c.head], emb.relations[c.relation], emb.entities[c.tail], a, norm);
    if (s > truth) ++higher;
    if (s == truth) ++tied;
  }
  // Mid-rank of the tie group, rounded up.
  return 1 + higher + (tied + 1) / 2;
}

}  // namespace testsupport
