#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape owns every node created during one forward pass. Ops are free
// functions taking Var handles; an op is recorded (with a backward rule) only
// when at least one input requires a gradient. Complex-valued rows use the
// split-half layout: columns [0, k) hold real parts and [k, 2k) imaginary parts.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transgcn/error.hpp"
#include "transgcn/matrix.hpp"

namespace transgcn::ad {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input. Its gradient accumulator is zero-initialized.
  Var leaf(Matrix value, bool requires_grad = true) {
    check_finite(value, "leaf");
    return push(std::move(value), requires_grad);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value(Var v) const { return node(v).value; }

  const Matrix& grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw StateError("gradient requested for a node without requires_grad");
    return n.grad;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

  /// Populates gradients of every requires_grad node with d(loss)/d(node).
  void backward(Var loss) {
    if (loss.tape != this) throw StateError("loss does not belong to this tape");
    const Node& ln = node(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw ShapeError("backward needs a 1x1 loss, got " + shape_str(ln.value));
    }
    if (backward_done_) throw StateError("backward called twice without zero_grad");
    backward_done_ = true;
    if (!ln.requires_grad) return;
    nodes_[loss.id].grad(0, 0) += 1.0;
    const std::size_t last = ln.producer;
    if (last == kNoProducer) return;
    for (std::size_t i = last + 1; i-- > 0;) {
      Op& op = ops_[i];
      op.backward(*this, nodes_[op.output].grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.fill(0.0);
    }
    backward_done_ = false;
  }

  /// Records an op output. `backward` is stored only when an input needs grads.
  Var record(const char* name, Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
    check_finite(value, name);
    bool needs = false;
    for (Var in : inputs) {
      if (in.tape != this) throw StateError(std::string(name) + ": input from another tape");
      needs = needs || node(in).requires_grad;
    }
    Var out = push(std::move(value), needs);
    if (needs) {
      nodes_[out.id].producer = ops_.size();
      ops_.push_back(Op{out.id, std::move(backward)});
    }
    return out;
  }

  /// Gradient slot of an input during backward, or nullptr when not tracked.
  Matrix* grad_slot(Var v) {
    Node& n = nodes_.at(v.id);
    return n.requires_grad ? &n.grad : nullptr;
  }

 private:
  static constexpr std::size_t kNoProducer = std::numeric_limits<std::size_t>::max();

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::size_t producer = kNoProducer;
  };

  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad) {
    Node n;
    if (requires_grad) n.grad = Matrix(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw StateError("stale or foreign Var");
    return nodes_[v.id];
  }

  static void check_finite(const Matrix& m, const char* where) {
    for (double x : m.data()) {
      if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + where);
    }
  }

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline const Matrix& Var::grad() const { return tape->grad(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw StateError(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

inline void require_even(const Matrix& m, const char* op) {
  if (m.cols() % 2 != 0) {
    throw ShapeError(std::string(op) + " needs an even column count, got " + shape_str(m));
  }
}

inline bool is_row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && a.cols() == b.cols() && a.rows() != 1;
}

inline void check_binary(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b) && !is_row_broadcast(a, b)) {
    throw ShapeError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Elementwise binary op with optional single-row broadcast of b.
// df returns the pair (d out/d a, d out/d b) at one coordinate.
template <typename F, typename DF>
Var elementwise(const char* name, Var a, Var b, F f, DF df) {
  Tape& tape = same_tape(a, b, name);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_binary(av, bv, name);
  const bool bcast = !av.same_shape(bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const std::size_t bi = bcast ? 0 : i;
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = f(av(i, j), bv(bi, j));
  }
  return tape.record(name, std::move(out), {a, b}, [a, b, bcast, df](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix* ga = t.grad_slot(a);
    Matrix* gb = t.grad_slot(b);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const std::size_t bi = bcast ? 0 : i;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        auto [da, db] = df(av(i, j), bv(bi, j));
        if (ga) (*ga)(i, j) += g(i, j) * da;
        if (gb) (*gb)(bi, j) += g(i, j) * db;
      }
    }
  });
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Var add(Var a, Var b) {
  return detail::elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

inline Var sub(Var a, Var b) {
  return detail::elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

inline Var hadamard(Var a, Var b) {
  return detail::elementwise(
      "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

namespace detail {

// Unary op whose backward needs both input and output values.
template <typename F, typename DF>
Var map(const char* name, Var a, F f, DF df) {
  Tape& tape = *a.tape;
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) out.data()[k] = f(av.data()[k]);
  auto out_id = std::make_shared<std::size_t>(0);
  Var res = tape.record(name, std::move(out), {a}, [a, out_id, df](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& x = t.value(a);
    const Matrix& y = t.value(Var{&t, *out_id});
    for (std::size_t k = 0; k < g.size(); ++k) ga->data()[k] += g.data()[k] * df(x.data()[k], y.data()[k]);
  });
  *out_id = res.id;
  return res;
}

}  // namespace detail

inline Var scale(Var a, double c) {
  return detail::map("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::map("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

/// relu with subgradient 0 at exactly 0.
inline Var relu(Var a) {
  return detail::map(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without forming sigmoid(x) first.
inline double stable_log_sigmoid(double x) {
  return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
}

inline Var sigmoid(Var a) {
  return detail::map("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) {
      std::ostringstream msg;
      msg << "log of non-positive value " << x;
      throw NumericError(msg.str());
    }
  }
  return detail::map("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var log_sigmoid(Var a) {
  return detail::map("log_sigmoid", a, stable_log_sigmoid,
                     [](double x, double) { return stable_sigmoid(-x); });
}

// ---- linear algebra ----

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Matrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += x * bv(p, j);
    }
  }
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (Matrix* ga = t.grad_slot(a)) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g(i, j) * bv(p, j);
          (*ga)(i, p) += s;
        }
    }
    if (Matrix* gb = t.grad_slot(b)) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av(i, p);
          for (std::size_t j = 0; j < n; ++j) (*gb)(p, j) += x * g(i, j);
        }
    }
  });
}

inline Var transpose(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return a.tape->record("transpose", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_slot(a))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(j, i) += g(i, j);
  });
}

/// Same values reinterpreted with a new shape (row-major order preserved).
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix& av = a.value();
  if (rows * cols != av.size()) throw ShapeError("reshape " + shape_str(av) + " to incompatible size");
  Matrix out(rows, cols, av.data());
  return a.tape->record("reshape", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_slot(a))
      for (std::size_t k = 0; k < g.size(); ++k) ga->data()[k] += g.data()[k];
  });
}

/// Copy of the value cut off from the gradient.
inline Var detach(Var a) { return a.tape->constant(a.value()); }

/// Multiplies row i by factors[i].
inline Var scale_rows(Var a, std::vector<double> factors) {
  const Matrix& av = a.value();
  if (factors.size() != av.rows()) throw ShapeError("scale_rows: factor count differs from row count");
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (double& x : out.row(i)) x *= factors[i];
  return a.tape->record("scale_rows", std::move(out), {a}, [a, f = std::move(factors)](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_slot(a))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(i, j) += g(i, j) * f[i];
  });
}

// ---- complex (split-half) ----

inline Var complex_hadamard(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b, "complex_hadamard");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::require_even(av, "complex_hadamard");
  detail::require_even(bv, "complex_hadamard");
  detail::check_binary(av, bv, "complex_hadamard");
  const bool bcast = !av.same_shape(bv);
  const std::size_t k = av.cols() / 2;
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const std::size_t bi = bcast ? 0 : i;
    for (std::size_t j = 0; j < k; ++j) {
      const double ar = av(i, j), ai = av(i, j + k), br = bv(bi, j), bim = bv(bi, j + k);
      out(i, j) = ar * br - ai * bim;
      out(i, j + k) = ar * bim + ai * br;
    }
  }
  return tape.record("complex_hadamard", std::move(out), {a, b}, [a, b, k, bcast](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix* ga = t.grad_slot(a);
    Matrix* gb = t.grad_slot(b);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const std::size_t bi = bcast ? 0 : i;
      for (std::size_t j = 0; j < k; ++j) {
        const double gr = g(i, j), gi = g(i, j + k);
        const double ar = av(i, j), ai = av(i, j + k), br = bv(bi, j), bim = bv(bi, j + k);
        // d a = g * conj(b), d b = g * conj(a)
        if (ga) {
          (*ga)(i, j) += gr * br + gi * bim;
          (*ga)(i, j + k) += gi * br - gr * bim;
        }
        if (gb) {
          (*gb)(bi, j) += gr * ar + gi * ai;
          (*gb)(bi, j + k) += gi * ar - gr * ai;
        }
      }
    }
  });
}

inline Var complex_conjugate(Var a) {
  const Matrix& av = a.value();
  detail::require_even(av, "complex_conjugate");
  const std::size_t k = av.cols() / 2;
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = k; j < 2 * k; ++j) out(i, j) = -out(i, j);
  return a.tape->record("complex_conjugate", std::move(out), {a}, [a, k](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_slot(a))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < 2 * k; ++j) (*ga)(i, j) += j < k ? g(i, j) : -g(i, j);
  });
}

/// Per-coordinate modulus: 2k columns in, k columns out. Subgradient 0 at z = 0.
inline Var complex_modulus(Var a) {
  const Matrix& av = a.value();
  detail::require_even(av, "complex_modulus");
  const std::size_t k = av.cols() / 2;
  Matrix out(av.rows(), k);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = std::hypot(av(i, j), av(i, j + k));
  auto out_id = std::make_shared<std::size_t>(0);
  Var res = a.tape->record("complex_modulus", std::move(out), {a}, [a, k, out_id](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& av = t.value(a);
    const Matrix& mod = t.value(Var{&t, *out_id});
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double r = mod(i, j);
        if (r == 0.0) continue;
        (*ga)(i, j) += g(i, j) * av(i, j) / r;
        (*ga)(i, j + k) += g(i, j) * av(i, j + k) / r;
      }
  });
  *out_id = res.id;
  return res;
}

/// Rescales every complex coordinate to modulus 1; coordinates with modulus
/// below `floor` become 1+0i and pass no gradient.
inline Var complex_normalize(Var a, double floor = 1e-12) {
  const Matrix& av = a.value();
  detail::require_even(av, "complex_normalize");
  const std::size_t k = av.cols() / 2;
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double r = std::hypot(av(i, j), av(i, j + k));
      if (r < floor) {
        out(i, j) = 1.0;
        out(i, j + k) = 0.0;
      } else {
        out(i, j) = av(i, j) / r;
        out(i, j + k) = av(i, j + k) / r;
      }
    }
  return a.tape->record("complex_normalize", std::move(out), {a}, [a, k, floor](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& av = t.value(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double x = av(i, j), y = av(i, j + k);
        const double r = std::hypot(x, y);
        if (r < floor) continue;
        const double r3 = r * r * r;
        const double gr = g(i, j), gi = g(i, j + k);
        (*ga)(i, j) += (gr * y * y - gi * x * y) / r3;
        (*ga)(i, j + k) += (gi * x * x - gr * x * y) / r3;
      }
  });
}

/// Angles theta (k columns) to unit complex numbers [cos theta | sin theta].
inline Var phase_to_unit_complex(Var theta) {
  const Matrix& tv = theta.value();
  const std::size_t k = tv.cols();
  Matrix out(tv.rows(), 2 * k);
  for (std::size_t i = 0; i < tv.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      out(i, j) = std::cos(tv(i, j));
      out(i, j + k) = std::sin(tv(i, j));
    }
  auto out_id = std::make_shared<std::size_t>(0);
  Var res = theta.tape->record("phase_to_unit_complex", std::move(out), {theta},
                               [theta, k, out_id](Tape& t, const Matrix& g) {
                                 Matrix* gt = t.grad_slot(theta);
                                 if (!gt) return;
                                 const Matrix& z = t.value(Var{&t, *out_id});
                                 for (std::size_t i = 0; i < g.rows(); ++i)
                                   for (std::size_t j = 0; j < k; ++j)
                                     (*gt)(i, j) += -g(i, j) * z(i, j + k) + g(i, j + k) * z(i, j);
                               });
  *out_id = res.id;
  return res;
}

// ---- sparse gather / scatter ----

inline Var gather_rows(Var m, std::vector<std::size_t> ids) {
  const Matrix& mv = m.value();
  Matrix out(ids.size(), mv.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= mv.rows()) {
      std::ostringstream msg;
      msg << "gather_rows id " << ids[t] << " >= " << mv.rows();
      throw IndexError(msg.str());
    }
    std::copy(mv.row(ids[t]).begin(), mv.row(ids[t]).end(), out.row(t).begin());
  }
  return m.tape->record("gather_rows", std::move(out), {m}, [m, ids = std::move(ids)](Tape& t, const Matrix& g) {
    if (Matrix* gm = t.grad_slot(m))
      for (std::size_t r = 0; r < ids.size(); ++r) {
        auto dst = gm->row(ids[r]);
        auto src = g.row(r);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
  });
}

inline Var segment_sum(Var rows, std::vector<std::size_t> segment_ids, std::size_t n_segments) {
  const Matrix& rv = rows.value();
  if (segment_ids.size() != rv.rows()) throw ShapeError("segment_sum: one segment id per row required");
  Matrix out(n_segments, rv.cols());
  for (std::size_t r = 0; r < segment_ids.size(); ++r) {
    if (segment_ids[r] >= n_segments) {
      std::ostringstream msg;
      msg << "segment id " << segment_ids[r] << " >= " << n_segments;
      throw IndexError(msg.str());
    }
    auto dst = out.row(segment_ids[r]);
    auto src = rv.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  return rows.tape->record("segment_sum", std::move(out), {rows},
                           [rows, ids = std::move(segment_ids)](Tape& t, const Matrix& g) {
                             if (Matrix* gr = t.grad_slot(rows))
                               for (std::size_t r = 0; r < ids.size(); ++r) {
                                 auto dst = gr->row(r);
                                 auto src = g.row(ids[r]);
                                 for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                               }
                           });
}

// ---- reductions ----

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape->record("sum", Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_slot(a))
      for (double& x : ga->data()) x += g(0, 0);
  });
}

/// Per-row L1 norm, rows x 1. Subgradient 0 at 0.
inline Var row_l1_norm(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (double x : av.row(i)) s += std::abs(x);
    out(i, 0) = s;
  }
  return a.tape->record("row_l1_norm", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& av = t.value(a);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) {
        const double x = av(i, j);
        (*ga)(i, j) += g(i, 0) * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
      }
  });
}

/// Per-row Euclidean norm, rows x 1. Zero rows pass no gradient.
inline Var row_l2_norm(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (double x : av.row(i)) s += x * x;
    out(i, 0) = std::sqrt(s);
  }
  auto out_id = std::make_shared<std::size_t>(0);
  Var res = a.tape->record("row_l2_norm", std::move(out), {a}, [a, out_id](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& av = t.value(a);
    const Matrix& n = t.value(Var{&t, *out_id});
    for (std::size_t i = 0; i < av.rows(); ++i) {
      if (n(i, 0) == 0.0) continue;
      for (std::size_t j = 0; j < av.cols(); ++j) (*ga)(i, j) += g(i, 0) * av(i, j) / n(i, 0);
    }
  });
  *out_id = res.id;
  return res;
}

/// Row-wise softmax with max subtraction.
inline Var softmax_over_scores(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto row = av.row(i);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += (out(i, j) = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= z;
  }
  auto out_id = std::make_shared<std::size_t>(0);
  Var res = a.tape->record("softmax_over_scores", std::move(out), {a}, [a, out_id](Tape& t, const Matrix& g) {
    Matrix* ga = t.grad_slot(a);
    if (!ga) return;
    const Matrix& y = t.value(Var{&t, *out_id});
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) (*ga)(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
  *out_id = res.id;
  return res;
}

}  // namespace transgcn::ad
