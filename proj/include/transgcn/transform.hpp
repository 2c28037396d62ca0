#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "transgcn/autodiff.hpp"
#include "transgcn/error.hpp"

namespace transgcn {

/// How a relation carries a head embedding onto its tail.
enum class Assumption {
  translation,  // t = h + r over real vectors
  rotation,     // t = h * r over complex vectors with |r_j| = 1
};

inline std::string_view assumption_name(Assumption a) {
  return a == Assumption::translation ? "translation" : "rotation";
}

inline std::optional<Assumption> parse_assumption(std::string_view s) {
  if (s == "translation") return Assumption::translation;
  if (s == "rotation") return Assumption::rotation;
  return std::nullopt;
}

/// Encoder activation applied after each layer's update.
enum class Activation { relu, identity };

inline std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline std::optional<Activation> parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  return std::nullopt;
}

/// Estimate of the tail of (v, r, ?): v + r, or v * r under rotation.
inline ad::Var estimate_from_incoming(ad::Var v, ad::Var r, Assumption a) {
  if (a == Assumption::translation) return ad::add(v, r);
  return ad::complex_hadamard(v, r);
}

/// Estimate of the head of (?, r, v): v - r, or v * conj(r) under rotation.
inline ad::Var estimate_from_outgoing(ad::Var v, ad::Var r, Assumption a) {
  if (a == Assumption::translation) return ad::sub(v, r);
  return ad::complex_hadamard(v, ad::complex_conjugate(r));
}

/// Phase angles (k columns) to unit-modulus complex rows (2k columns).
inline ad::Var rotation_phase_to_embedding(ad::Var theta) { return ad::phase_to_unit_complex(theta); }

}  // namespace transgcn
