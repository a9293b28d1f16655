#pragma once

#include "mavias/autodiff/matrix.hpp"
#include "mavias/autodiff/parameters.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mavias::ad {

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape over matrix-valued nodes.
///
/// Every operation appends one node holding its value and a closure that
/// propagates the node's adjoint to its inputs. Nodes are appended in
/// topological order, so one sweep from the back visits each node exactly once.
/// Adjoints accumulate additively, which covers fan-out (for instance the
/// classification head used by both branches). Parameter leaves push their
/// adjoint into the owning ParameterStore's gradient buffer, so repeated
/// backward passes accumulate there until zero_grads().
class Tape {
public:
    explicit Tape(ParameterStore* store = nullptr) : store_(store) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    std::size_t size() const noexcept { return nodes_.size(); }
    ParameterStore* store() const noexcept { return store_; }

    const DenseMatrix& value(Var v) const { return node(v).value; }
    const DenseMatrix& grad(Var v) const { return node(v).grad; }

    /// Scalar value of a 1x1 node.
    double scalar(Var v) const {
        const auto& m = value(v);
        if (m.rows() != 1 || m.cols() != 1)
            throw ContractViolation("Tape::scalar on non-scalar node " + shape_string(m));
        return m(0, 0);
    }

    Var constant(DenseMatrix m) { return push(std::move(m), {}); }

    /// Leaf bound to a parameter of the attached store. Re-uses the existing
    /// leaf when the same parameter is requested twice.
    Var param(ParamRef ref) {
        if (!store_) throw ContractViolation("Tape::param requires an attached ParameterStore");
        if (ref.index >= store_->size())
            throw ContractViolation("Tape::param: parameter index out of range");
        if (ref.index < param_leaf_.size() && param_leaf_[ref.index] != kNone)
            return {param_leaf_[ref.index]};
        Var v = push((*store_)[ref].value, {});
        if (param_leaf_.size() <= ref.index) param_leaf_.resize(ref.index + 1, kNone);
        param_leaf_[ref.index] = v.id;
        leaf_param_.push_back({v.id, ref});
        return v;
    }

    Var push(DenseMatrix value, std::function<void(Tape&, std::size_t)> backward) {
        nodes_.push_back({std::move(value), {}, std::move(backward)});
        return {nodes_.size() - 1};
    }

    /// Adjoint buffer of a node, allocated lazily at the node's shape.
    DenseMatrix& adjoint(std::size_t id) {
        auto& n = nodes_.at(id);
        if (n.grad.size() != n.value.size()) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    /// Smallest |pre-activation| seen by any ReLU on this tape. Finite-difference
    /// checks use it to detect that a perturbation may cross a kink.
    double min_relu_margin() const noexcept { return min_relu_margin_; }
    void note_relu_margin(double m) noexcept {
        if (m < min_relu_margin_) min_relu_margin_ = m;
    }

    /// Reverse sweep from a scalar node. Gradients are added into the store's
    /// buffers; the seed scales every resulting gradient linearly.
    void backward(Var loss, double seed = 1.0) {
        if (nodes_.empty()) throw ContractViolation("backward called before any forward was recorded");
        if (loss.id >= nodes_.size()) throw ContractViolation("backward: node is not on this tape");
        const auto& lv = nodes_[loss.id].value;
        if (lv.rows() != 1 || lv.cols() != 1)
            throw ContractViolation("backward requires a scalar loss, got " + shape_string(lv));

        for (auto& n : nodes_) n.grad = DenseMatrix();
        adjoint(loss.id)(0, 0) = seed;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.grad.empty() || !n.backward) continue;
            n.backward(*this, i);
        }
        for (const auto& [id, ref] : leaf_param_) {
            const auto& g = nodes_[id].grad;
            if (g.empty()) continue;
            auto& dst = (*store_)[ref].grad;
            for (std::size_t k = 0; k < g.size(); ++k) dst.data()[k] += g.data()[k];
        }
    }

private:
    struct Node {
        DenseMatrix value;
        DenseMatrix grad;
        std::function<void(Tape&, std::size_t)> backward;
    };
    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw ContractViolation("Var does not belong to this tape");
        return nodes_[v.id];
    }

    ParameterStore* store_;
    std::vector<Node> nodes_;
    std::vector<std::size_t> param_leaf_;
    struct LeafParam {
        std::size_t id;
        ParamRef ref;
    };
    std::vector<LeafParam> leaf_param_;
    double min_relu_margin_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Primitive operations. Each records its own adjoint rule.

/// x * W^T + b for x: B x in, W: out x in, b: 1 x out.
inline Var linear(Tape& t, Var x, Var w, Var b) {
    const auto& X = t.value(x);
    const auto& W = t.value(w);
    const auto& Bv = t.value(b);
    if (X.cols() != W.cols())
        throw ContractViolation("linear: input width " + std::to_string(X.cols()) +
                                " != weight fan-in " + std::to_string(W.cols()));
    if (Bv.rows() != 1 || Bv.cols() != W.rows())
        throw ContractViolation("linear: bias shape " + shape_string(Bv) + " incompatible with weight " +
                                shape_string(W));
    const std::size_t n = X.rows(), in = W.cols(), out = W.rows();
    DenseMatrix Y(n, out);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = X.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = W.data() + o * in;
            double s = Bv(0, o);
            for (std::size_t k = 0; k < in; ++k) s += xr[k] * wo[k];
            Y(r, o) = s;
        }
    }
    return t.push(std::move(Y), [x, w, b, n, in, out](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        const DenseMatrix& Xv = tp.value(x);
        const DenseMatrix& Wv = tp.value(w);
        auto& dX = tp.adjoint(x.id);
        auto& dW = tp.adjoint(w.id);
        auto& dB = tp.adjoint(b.id);
        for (std::size_t r = 0; r < n; ++r) {
            const double* xr = Xv.data() + r * in;
            double* dxr = dX.data() + r * in;
            for (std::size_t o = 0; o < out; ++o) {
                const double g = dY(r, o);
                if (g == 0.0) continue;
                const double* wo = Wv.data() + o * in;
                double* dwo = dW.data() + o * in;
                for (std::size_t k = 0; k < in; ++k) {
                    dxr[k] += g * wo[k];
                    dwo[k] += g * xr[k];
                }
                dB(0, o) += g;
            }
        }
    });
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
inline Var relu(Tape& t, Var x) {
    DenseMatrix Y = t.value(x);
    double margin = std::numeric_limits<double>::infinity();
    for (double& v : Y.values()) {
        margin = std::min(margin, std::abs(v));
        if (v <= 0.0) v = 0.0;
    }
    t.note_relu_margin(margin);
    return t.push(std::move(Y), [x](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        const auto& X = tp.value(x);
        auto& dX = tp.adjoint(x.id);
        for (std::size_t k = 0; k < X.size(); ++k)
            if (X.data()[k] > 0.0) dX.data()[k] += dY.data()[k];
    });
}

inline Var add(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (!A.same_shape(B))
        throw ContractViolation("add: shape " + shape_string(A) + " vs " + shape_string(B));
    DenseMatrix Y = A;
    for (std::size_t k = 0; k < Y.size(); ++k) Y.data()[k] += B.data()[k];
    return t.push(std::move(Y), [a, b](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        auto& dA = tp.adjoint(a.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dA.data()[k] += dY.data()[k];
        auto& dB = tp.adjoint(b.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dB.data()[k] += dY.data()[k];
    });
}

/// a + scale * b, elementwise.
inline Var axpy(Tape& t, Var a, double scale, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (!A.same_shape(B))
        throw ContractViolation("axpy: shape " + shape_string(A) + " vs " + shape_string(B));
    DenseMatrix Y = A;
    for (std::size_t k = 0; k < Y.size(); ++k) Y.data()[k] += scale * B.data()[k];
    return t.push(std::move(Y), [a, b, scale](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        auto& dA = tp.adjoint(a.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dA.data()[k] += dY.data()[k];
        auto& dB = tp.adjoint(b.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dB.data()[k] += scale * dY.data()[k];
    });
}

inline Var scale(Tape& t, Var a, double c) {
    DenseMatrix Y = t.value(a);
    for (double& v : Y.values()) v *= c;
    return t.push(std::move(Y), [a, c](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        auto& dA = tp.adjoint(a.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dA.data()[k] += c * dY.data()[k];
    });
}

inline Var square(Tape& t, Var a) {
    DenseMatrix Y = t.value(a);
    for (double& v : Y.values()) v *= v;
    return t.push(std::move(Y), [a](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        const auto& A = tp.value(a);
        auto& dA = tp.adjoint(a.id);
        for (std::size_t k = 0; k < dY.size(); ++k) dA.data()[k] += 2.0 * A.data()[k] * dY.data()[k];
    });
}

/// Multiplies row r by factors[r]. A factor of 0 cuts the row out of the graph.
inline Var scale_rows(Tape& t, Var a, std::vector<double> factors) {
    DenseMatrix Y = t.value(a);
    if (factors.size() != Y.rows())
        throw ContractViolation("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                                std::to_string(Y.rows()) + " rows");
    for (std::size_t r = 0; r < Y.rows(); ++r)
        for (double& v : Y.row_span(r)) v = factors[r] == 0.0 ? 0.0 : v * factors[r];
    return t.push(std::move(Y), [a, f = std::move(factors)](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        auto& dA = tp.adjoint(a.id);
        for (std::size_t r = 0; r < dY.rows(); ++r) {
            if (f[r] == 0.0) continue;
            for (std::size_t c = 0; c < dY.cols(); ++c) dA(r, c) += f[r] * dY(r, c);
        }
    });
}

/// Mean of all entries, as a 1x1 node.
inline Var mean(Tape& t, Var a) {
    const auto& A = t.value(a);
    if (A.empty()) throw ContractViolation("mean of an empty node");
    double s = 0.0;
    for (double v : A.values()) s += v;
    const double inv = 1.0 / static_cast<double>(A.size());
    return t.push(DenseMatrix(1, 1, s * inv), [a, inv](Tape& tp, std::size_t self) {
        const double g = tp.adjoint(self)(0, 0) * inv;
        auto& dA = tp.adjoint(a.id);
        for (double& v : dA.values()) v += g;
    });
}

/// Euclidean norm of every row: B x k -> B x 1. The subgradient at a zero row is 0.
inline Var row_norms(Tape& t, Var a) {
    const auto& A = t.value(a);
    DenseMatrix Y(A.rows(), 1);
    for (std::size_t r = 0; r < A.rows(); ++r) Y(r, 0) = l2_norm(A.row_span(r));
    return t.push(std::move(Y), [a](Tape& tp, std::size_t self) {
        const DenseMatrix& dY = tp.adjoint(self);
        const auto& Av = tp.value(a);
        const auto& Yv = tp.value(Var{self});
        auto& dA = tp.adjoint(a.id);
        for (std::size_t r = 0; r < Av.rows(); ++r) {
            const double nrm = Yv(r, 0);
            if (nrm == 0.0) continue;
            const double g = dY(r, 0) / nrm;
            for (std::size_t c = 0; c < Av.cols(); ++c) dA(r, c) += g * Av(r, c);
        }
    });
}

/// Mean softmax cross-entropy over the rows of a B x p logit node.
inline Var softmax_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> labels) {
    const auto& Z = t.value(logits);
    if (labels.size() != Z.rows())
        throw ContractViolation("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(Z.rows()) + " rows");
    if (Z.rows() == 0) throw ContractViolation("softmax_cross_entropy on an empty batch");
    if (!Z.all_finite()) throw NumericError("softmax_cross_entropy: non-finite logits");
    const std::size_t n = Z.rows(), p = Z.cols();
    DenseMatrix probs(n, p);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= p)
            throw ContractViolation("label " + std::to_string(labels[r]) + " outside [0, " +
                                    std::to_string(p) + ")");
        double mx = Z(r, 0);
        for (std::size_t c = 1; c < p; ++c) mx = std::max(mx, Z(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < p; ++c) {
            probs(r, c) = std::exp(Z(r, c) - mx);
            s += probs(r, c);
        }
        for (std::size_t c = 0; c < p; ++c) probs(r, c) /= s;
        total += -(Z(r, labels[r]) - mx - std::log(s));
    }
    std::vector<std::size_t> y(labels.begin(), labels.end());
    const double inv = 1.0 / static_cast<double>(n);
    return t.push(DenseMatrix(1, 1, total * inv),
                  [logits, probs = std::move(probs), y = std::move(y), inv](Tape& tp, std::size_t self) {
                      const double g = tp.adjoint(self)(0, 0) * inv;
                      auto& dZ = tp.adjoint(logits.id);
                      for (std::size_t r = 0; r < probs.rows(); ++r)
                          for (std::size_t c = 0; c < probs.cols(); ++c)
                              dZ(r, c) += g * (probs(r, c) - (c == y[r] ? 1.0 : 0.0));
                  });
}

// ---------------------------------------------------------------------------
// Tape-free scalar helpers.

/// -log softmax(logits)[label], computed with max subtraction.
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    if (logits.empty()) throw ContractViolation("softmax_cross_entropy: empty logits");
    if (label >= logits.size())
        throw ContractViolation("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(logits.size()) + ")");
    for (double z : logits)
        if (!std::isfinite(z)) throw NumericError("softmax_cross_entropy: non-finite logits");
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double s = 0.0;
    for (double z : logits) s += std::exp(z - mx);
    return -(logits[label] - mx - std::log(s));
}

} // namespace mavias::ad
