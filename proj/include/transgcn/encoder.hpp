#pragma once

// Graph-convolutional encoder over entities and relations.
//
// Each layer turns every training edge into an estimate of its endpoint
// (head + r for the tail, tail - r for the head, or the rotation analogues),
// sums the estimates per entity, normalizes by degree, applies a shared W0 and
// adds the previous entity state before the activation (relu unless
// configured otherwise). Relations are projected through a shared W1 followed
// by the same activation; under rotation the result is renormalized to unit
// modulus so the next layer still rotates.

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <utility>
#include <vector>

#include "transgcn/autodiff.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/matrix.hpp"
#include "transgcn/transform.hpp"

namespace transgcn {

struct LayerParams {
  Matrix w0;  // d x d, entity message transform
  Matrix w1;  // d x d, relation projection

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// All trainable parameters. Rotation relations are stored as phase angles
/// (d/2 columns); translation relations as plain d-dimensional rows.
struct ModelState {
  Assumption assumption = Assumption::translation;
  Activation activation = Activation::relu;
  std::size_t dim = 0;
  Matrix entity_embed;
  Matrix relation_params;
  std::vector<LayerParams> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t num_entities() const { return entity_embed.rows(); }
  std::size_t num_relations() const { return relation_params.rows(); }
  std::size_t relation_width() const { return assumption == Assumption::rotation ? dim / 2 : dim; }

  void check() const {
    if (assumption == Assumption::rotation && dim % 2 != 0) throw ShapeError("rotation needs an even dimension");
    if (entity_embed.cols() != dim) throw ShapeError("entity embedding width differs from dim");
    if (relation_params.cols() != relation_width()) throw ShapeError("relation parameter width mismatch");
    for (const auto& l : layers) {
      if (l.w0.rows() != dim || l.w0.cols() != dim || l.w1.rows() != dim || l.w1.cols() != dim) {
        throw ShapeError("layer weights must be dim x dim");
      }
    }
  }

  /// Parameter matrices in the fixed order used by optimizers and checkpoints:
  /// entities, relations, then W0, W1 of each layer.
  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out{&entity_embed, &relation_params};
    for (auto& l : layers) {
      out.push_back(&l.w0);
      out.push_back(&l.w1);
    }
    return out;
  }

  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out{&entity_embed, &relation_params};
    for (const auto& l : layers) {
      out.push_back(&l.w0);
      out.push_back(&l.w1);
    }
    return out;
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// ModelState parameters placed on a tape.
struct ModelVars {
  ad::Var entities;
  ad::Var relations;
  std::vector<std::pair<ad::Var, ad::Var>> layers;  // (W0, W1)
  Activation activation = Activation::relu;

  /// Same order as ModelState::parameters().
  std::vector<ad::Var> all() const {
    std::vector<ad::Var> out{entities, relations};
    for (const auto& [w0, w1] : layers) {
      out.push_back(w0);
      out.push_back(w1);
    }
    return out;
  }
};

inline ModelVars bind(ad::Tape& tape, const ModelState& state, bool requires_grad) {
  state.check();
  ModelVars vars{tape.leaf(state.entity_embed, requires_grad), tape.leaf(state.relation_params, requires_grad), {}};
  for (const auto& l : state.layers) {
    vars.layers.emplace_back(tape.leaf(l.w0, requires_grad), tape.leaf(l.w1, requires_grad));
  }
  vars.activation = state.activation;
  return vars;
}

/// Layer-0 relation rows: phases become unit complex numbers under rotation.
inline ad::Var materialize_relations(ad::Var relation_params, Assumption a) {
  if (a == Assumption::rotation) return rotation_phase_to_embedding(relation_params);
  return relation_params;
}

/// Per-entity messages m = (1/c_i) W0 (sum of incoming estimates + sum of
/// outgoing estimates). Isolated entities receive zero.
inline ad::Var aggregate_messages(ad::Var entities, ad::Var relations, ad::Var w0, const NeighborhoodIndex& index,
                                  Assumption a) {
  const std::size_t n = entities.rows();
  if (index.num_entities() != n || index.num_relations != relations.rows()) {
    std::ostringstream msg;
    msg << "neighborhood index covers " << index.num_entities() << " entities / " << index.num_relations
        << " relations, embeddings have " << n << " / " << relations.rows();
    throw ShapeError(msg.str());
  }
  std::vector<std::size_t> in_src, in_rel, in_seg, out_src, out_rel, out_seg;
  for (std::size_t i = 0; i < n; ++i) {
    for (const Neighbor& nb : index.incoming[i]) {
      in_src.push_back(nb.entity);
      in_rel.push_back(nb.relation);
      in_seg.push_back(i);
    }
    for (const Neighbor& nb : index.outgoing[i]) {
      out_src.push_back(nb.entity);
      out_rel.push_back(nb.relation);
      out_seg.push_back(i);
    }
  }
  ad::Var from_in = estimate_from_incoming(ad::gather_rows(entities, std::move(in_src)),
                                           ad::gather_rows(relations, std::move(in_rel)), a);
  ad::Var from_out = estimate_from_outgoing(ad::gather_rows(entities, std::move(out_src)),
                                            ad::gather_rows(relations, std::move(out_rel)), a);
  ad::Var summed = ad::add(ad::segment_sum(from_in, std::move(in_seg), n), ad::segment_sum(from_out, std::move(out_seg), n));
  std::vector<double> inv_degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (index.degree[i] > 0) inv_degree[i] = 1.0 / static_cast<double>(index.degree[i]);
  }
  // Rows are entity states, so W0 x becomes x W0^T.
  return ad::matmul(ad::scale_rows(summed, std::move(inv_degree)), ad::transpose(w0));
}

inline ad::Var activate(ad::Var x, Activation act) { return act == Activation::relu ? ad::relu(x) : x; }

/// v' = relu(m + v). Under rotation relu acts on real and imaginary halves alike.
inline ad::Var update_entities(ad::Var messages, ad::Var previous, Activation act = Activation::relu) {
  if (messages.rows() != previous.rows() || messages.cols() != previous.cols()) {
    throw ShapeError("update_entities: message and state shapes differ");
  }
  return activate(ad::add(messages, previous), act);
}

/// r' = relu(W1 r), renormalized to unit modulus per coordinate under rotation.
inline ad::Var update_relations(ad::Var relations, ad::Var w1, Assumption a, Activation act = Activation::relu) {
  ad::Var projected = activate(ad::matmul(relations, ad::transpose(w1)), act);
  if (a == Assumption::rotation) return ad::complex_normalize(projected);
  return projected;
}

struct Encoded {
  ad::Var entities;
  ad::Var relations;
};

/// Runs the first `use_layers` layers (all when omitted). Zero layers returns
/// the raw entity rows and materialized relations, i.e. the base model.
inline Encoded encode(const ModelVars& vars, const NeighborhoodIndex& index, Assumption a,
                      std::size_t use_layers = static_cast<std::size_t>(-1)) {
  Encoded cur{vars.entities, materialize_relations(vars.relations, a)};
  const std::size_t layers = std::min(use_layers, vars.layers.size());
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& [w0, w1] = vars.layers[l];
    ad::Var messages = aggregate_messages(cur.entities, cur.relations, w0, index, a);
    ad::Var next_entities = update_entities(messages, cur.entities, vars.activation);
    ad::Var next_relations = update_relations(cur.relations, w1, a, vars.activation);
    cur = {next_entities, next_relations};
  }
  return cur;
}

/// Final-layer embeddings of a frozen model, without gradient tracking.
struct FrozenEmbeddings {
  Assumption assumption = Assumption::translation;
  Matrix entities;   // E x d
  Matrix relations;  // R x d (unit complex rows under rotation)
};

inline FrozenEmbeddings encode_frozen(const ModelState& state, const NeighborhoodIndex& index) {
  ad::Tape tape;
  ModelVars vars = bind(tape, state, false);
  Encoded enc = encode(vars, index, state.assumption);
  return {state.assumption, enc.entities.value(), enc.relations.value()};
}

}  // namespace transgcn
