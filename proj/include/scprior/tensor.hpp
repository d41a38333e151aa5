#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scprior/common.hpp"

namespace scprior::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

class Tape;

// Handle onto a tape node. All tensors are dense row-major float64 matrices;
// scalars are 1x1, vectors are 1xN or Nx1.
class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, long id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    long id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    long rows() const;
    long cols() const;
    long size() const { return rows() * cols(); }

    const Eigen::VectorXd& value() const;
    const Eigen::VectorXd& grad() const;
    CMapM mat() const;
    double scalar() const;

private:
    Tape* tape_ = nullptr;
    long id_ = -1;
};

struct Node {
    long rows = 0;
    long cols = 0;
    Eigen::VectorXd value;  // flat, row-major
    Eigen::VectorXd grad;   // empty until touched by backward
    bool requires_grad = false;
    std::function<void(Tape&)> backward;  // empty for leaves/constants
};

// Dynamic tape, rebuilt per training/sampling step. One backward pass per
// forward build; a second backward without a new forward is an error.
class Tape {
public:
    Tensor constant(long rows, long cols, Eigen::VectorXd data) {
        return push(rows, cols, std::move(data), false, nullptr);
    }

    Tensor constant(const RowMat& m) {
        Eigen::VectorXd flat(m.size());
        MapM(flat.data(), m.rows(), m.cols()) = m;
        return constant(m.rows(), m.cols(), std::move(flat));
    }

    Tensor scalar_const(double v) {
        Eigen::VectorXd d(1);
        d[0] = v;
        return constant(1, 1, std::move(d));
    }

    Tensor leaf(long rows, long cols, Eigen::VectorXd data) {
        Tensor t = push(rows, cols, std::move(data), true, nullptr);
        // differentiable leaves always expose a gradient, zero when untouched
        nodes_[static_cast<std::size_t>(t.id())].grad = Eigen::VectorXd::Zero(rows * cols);
        return t;
    }

    Tensor push(long rows, long cols, Eigen::VectorXd data, bool requires_grad,
                std::function<void(Tape&)> backward) {
        if (data.size() != rows * cols)
            throw validation_error("tensor buffer length " + std::to_string(data.size()) +
                                   " does not match shape " + std::to_string(rows) + "x" +
                                   std::to_string(cols));
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.value = std::move(data);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Tensor(this, static_cast<long>(nodes_.size()) - 1);
    }

    const Node& node(long id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node_mut(long id) { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t node_count() const { return nodes_.size(); }

    // Accumulate into a node's gradient buffer, allocating on first touch.
    MapM grad_acc(long id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) n.grad = Eigen::VectorXd::Zero(n.rows * n.cols);
        return MapM(n.grad.data(), n.rows, n.cols);
    }

    void backward(const Tensor& loss) {
        if (backward_done_) throw validation_error("backward already ran on this tape");
        if (loss.rows() != 1 || loss.cols() != 1)
            throw validation_error("backward requires a scalar loss, got " +
                                   std::to_string(loss.rows()) + "x" + std::to_string(loss.cols()));
        backward_done_ = true;
        Node& l = nodes_[static_cast<std::size_t>(loss.id())];
        if (l.grad.size() == 0) l.grad = Eigen::VectorXd::Zero(1);
        l.grad[0] = 1.0;
        for (long i = loss.id(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || !n.backward) continue;
            if (n.grad.size() == 0) continue;  // not reachable from the loss
            n.backward(*this);
        }
    }

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline long Tensor::rows() const { return tape_->node(id_).rows; }
inline long Tensor::cols() const { return tape_->node(id_).cols; }
inline const Eigen::VectorXd& Tensor::value() const { return tape_->node(id_).value; }
inline const Eigen::VectorXd& Tensor::grad() const { return tape_->node(id_).grad; }
inline CMapM Tensor::mat() const {
    const Node& n = tape_->node(id_);
    return CMapM(n.value.data(), n.rows, n.cols);
}
inline double Tensor::scalar() const {
    const Node& n = tape_->node(id_);
    require(n.rows == 1 && n.cols == 1, "scalar() on non-scalar tensor");
    return n.value[0];
}

namespace detail {

inline void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw validation_error(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                           "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                           "x" + std::to_string(b.cols()));
}

// Index map for elementwise broadcasting: equal shape, scalar, single row
// (1,C) against (R,C), or single column (R,1) against (R,C).
struct Bcast {
    long rows, cols;     // operand shape
    bool row_b, col_b;   // broadcast along rows / along cols
    long at(long i, long j) const {
        const long r = row_b ? 0 : i;
        const long c = col_b ? 0 : j;
        return r * cols + c;
    }
};

inline Bcast bcast_for(const char* op, long out_r, long out_c, const Tensor& t) {
    Bcast b{t.rows(), t.cols(), false, false};
    if (t.rows() == out_r && t.cols() == out_c) return b;
    b.row_b = (t.rows() == 1 && out_r != 1);
    b.col_b = (t.cols() == 1 && out_c != 1);
    const long er = b.row_b ? 1 : out_r;
    const long ec = b.col_b ? 1 : out_c;
    if (t.rows() != er || t.cols() != ec)
        throw validation_error(std::string(op) + ": operand " + std::to_string(t.rows()) + "x" +
                               std::to_string(t.cols()) + " does not broadcast to " +
                               std::to_string(out_r) + "x" + std::to_string(out_c));
    return b;
}

enum class BinOp { Add, Sub, Mul, Div };

inline Tensor binary(const char* name, BinOp op, const Tensor& a, const Tensor& b) {
    if (a.tape() != b.tape()) throw validation_error("operands live on different tapes");
    Tape& tp = *a.tape();
    const long out_r = std::max(a.rows(), b.rows());
    const long out_c = std::max(a.cols(), b.cols());
    const Bcast ba = bcast_for(name, out_r, out_c, a);
    const Bcast bb = bcast_for(name, out_r, out_c, b);

    Eigen::VectorXd out(out_r * out_c);
    const Eigen::VectorXd& va = a.value();
    const Eigen::VectorXd& vb = b.value();
    for (long i = 0; i < out_r; ++i)
        for (long j = 0; j < out_c; ++j) {
            const double x = va[ba.at(i, j)];
            const double y = vb[bb.at(i, j)];
            double v = 0;
            switch (op) {
                case BinOp::Add: v = x + y; break;
                case BinOp::Sub: v = x - y; break;
                case BinOp::Mul: v = x * y; break;
                case BinOp::Div: v = x / y; break;
            }
            out[i * out_c + j] = v;
        }

    const bool rg = tp.node(a.id()).requires_grad || tp.node(b.id()).requires_grad;
    const long ida = a.id(), idb = b.id();
    Tensor res = tp.push(out_r, out_c, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id();
        tp.node_mut(self).backward = [=](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& g = s.grad;
            const Eigen::VectorXd& xa = t.node(ida).value;
            const Eigen::VectorXd& xb = t.node(idb).value;
            const bool need_a = t.node(ida).requires_grad;
            const bool need_b = t.node(idb).requires_grad;
            MapM ga = need_a ? t.grad_acc(ida) : MapM(nullptr, 0, 0);
            MapM gb = need_b ? t.grad_acc(idb) : MapM(nullptr, 0, 0);
            for (long i = 0; i < s.rows; ++i)
                for (long j = 0; j < s.cols; ++j) {
                    const double gv = g[i * s.cols + j];
                    if (gv == 0.0) continue;
                    switch (op) {
                        case BinOp::Add:
                            if (need_a) ga.data()[ba.at(i, j)] += gv;
                            if (need_b) gb.data()[bb.at(i, j)] += gv;
                            break;
                        case BinOp::Sub:
                            if (need_a) ga.data()[ba.at(i, j)] += gv;
                            if (need_b) gb.data()[bb.at(i, j)] -= gv;
                            break;
                        case BinOp::Mul:
                            if (need_a) ga.data()[ba.at(i, j)] += gv * xb[bb.at(i, j)];
                            if (need_b) gb.data()[bb.at(i, j)] += gv * xa[ba.at(i, j)];
                            break;
                        case BinOp::Div: {
                            const double y = xb[bb.at(i, j)];
                            if (need_a) ga.data()[ba.at(i, j)] += gv / y;
                            if (need_b) gb.data()[bb.at(i, j)] -= gv * xa[ba.at(i, j)] / (y * y);
                            break;
                        }
                    }
                }
        };
    }
    return res;
}

// Elementwise unary op with value-based derivative hook.
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df_from_x) {
    Tape& tp = *a.tape();
    Eigen::VectorXd out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = f(out[i]);
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(a.rows(), a.cols(), std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida, df_from_x](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& x = t.node(ida).value;
            MapM ga = t.grad_acc(ida);
            for (long i = 0; i < s.grad.size(); ++i)
                ga.data()[i] += s.grad[i] * df_from_x(x[i], s.value[i]);
        };
    }
    return res;
}

}  // namespace detail

// --- elementwise ----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary("add", detail::BinOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary("sub", detail::BinOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary("mul", detail::BinOp::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary("div", detail::BinOp::Div, a, b); }

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor abs_op(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::abs(x); },
                         [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Tensor sqrt_op(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::sqrt(x); },
                         [](double, double y) { return 0.5 / y; });
}

inline Tensor exp_op(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// exact gelu, x * Phi(x)
inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

// --- structure ------------------------------------------------------------

inline Tensor reshape(const Tensor& a, long rows, long cols) {
    Tape& tp = *a.tape();
    if (rows * cols != a.size())
        throw validation_error("reshape: cannot view " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " as " + std::to_string(rows) + "x" +
                               std::to_string(cols));
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(rows, cols, a.value(), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida](Tape& t) {
            MapM ga = t.grad_acc(ida);
            Eigen::Map<Eigen::VectorXd>(ga.data(), ga.size()) += t.node(self).grad;
        };
    }
    return res;
}

inline Tensor transpose(const Tensor& a) {
    Tape& tp = *a.tape();
    Eigen::VectorXd out(a.size());
    MapM(out.data(), a.cols(), a.rows()) = a.mat().transpose();
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(a.cols(), a.rows(), std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida](Tape& t) {
            const Node& s = t.node(self);
            t.grad_acc(ida) += CMapM(s.grad.data(), s.rows, s.cols).transpose();
        };
    }
    return res;
}

inline Tensor slice(const Tensor& a, int axis, long start, long len) {
    Tape& tp = *a.tape();
    require(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
    const long lim = axis == 0 ? a.rows() : a.cols();
    if (start < 0 || len < 0 || start + len > lim)
        throw validation_error("slice: range [" + std::to_string(start) + ", " +
                               std::to_string(start + len) + ") out of bounds for axis size " +
                               std::to_string(lim));
    const long out_r = axis == 0 ? len : a.rows();
    const long out_c = axis == 1 ? len : a.cols();
    Eigen::VectorXd out(out_r * out_c);
    if (axis == 0)
        MapM(out.data(), out_r, out_c) = a.mat().middleRows(start, len);
    else
        MapM(out.data(), out_r, out_c) = a.mat().middleCols(start, len);
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(out_r, out_c, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [=](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            if (axis == 0)
                t.grad_acc(ida).middleRows(start, len) += g;
            else
                t.grad_acc(ida).middleCols(start, len) += g;
        };
    }
    return res;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: empty input");
    require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    Tape& tp = *parts[0].tape();
    long out_r = axis == 0 ? 0 : parts[0].rows();
    long out_c = axis == 1 ? 0 : parts[0].cols();
    bool rg = false;
    for (const Tensor& p : parts) {
        if (axis == 0) {
            require(p.cols() == out_c, "concat: column count mismatch");
            out_r += p.rows();
        } else {
            require(p.rows() == out_r, "concat: row count mismatch");
            out_c += p.cols();
        }
        rg = rg || tp.node(p.id()).requires_grad;
    }
    Eigen::VectorXd out(out_r * out_c);
    MapM om(out.data(), out_r, out_c);
    long off = 0;
    for (const Tensor& p : parts) {
        if (axis == 0) {
            om.middleRows(off, p.rows()) = p.mat();
            off += p.rows();
        } else {
            om.middleCols(off, p.cols()) = p.mat();
            off += p.cols();
        }
    }
    Tensor res = tp.push(out_r, out_c, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id();
        std::vector<long> ids;
        std::vector<long> sizes;
        for (const Tensor& p : parts) {
            ids.push_back(p.id());
            sizes.push_back(axis == 0 ? p.rows() : p.cols());
        }
        tp.node_mut(self).backward = [self, ids, sizes, axis](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            long off2 = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.node(ids[k]).requires_grad) {
                    if (axis == 0)
                        t.grad_acc(ids[k]) += g.middleRows(off2, sizes[k]);
                    else
                        t.grad_acc(ids[k]) += g.middleCols(off2, sizes[k]);
                }
                off2 += sizes[k];
            }
        };
    }
    return res;
}

// --- contractions -----------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a, b);
    Tape& tp = *a.tape();
    Eigen::VectorXd out(a.rows() * b.cols());
    MapM(out.data(), a.rows(), b.cols()).noalias() = a.mat() * b.mat();
    const bool rg = tp.node(a.id()).requires_grad || tp.node(b.id()).requires_grad;
    Tensor res = tp.push(a.rows(), b.cols(), std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id(), idb = b.id();
        tp.node_mut(self).backward = [self, ida, idb](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            const Node& na = t.node(ida);
            const Node& nb = t.node(idb);
            CMapM ma(na.value.data(), na.rows, na.cols);
            CMapM mb(nb.value.data(), nb.rows, nb.cols);
            if (na.requires_grad) t.grad_acc(ida).noalias() += g * mb.transpose();
            if (nb.requires_grad) t.grad_acc(idb).noalias() += ma.transpose() * g;
        };
    }
    return res;
}

inline Tensor sum(const Tensor& a) {
    Tape& tp = *a.tape();
    Eigen::VectorXd out(1);
    out[0] = a.value().sum();
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(1, 1, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida](Tape& t) {
            t.grad_acc(ida).array() += t.node(self).grad[0];
        };
    }
    return res;
}

inline Tensor mean(const Tensor& a) {
    Tensor s = sum(a);
    return scale(s, 1.0 / static_cast<double>(a.size()));
}

// row sums: (R,C) -> (R,1)
inline Tensor sum_cols(const Tensor& a) {
    Tape& tp = *a.tape();
    Eigen::VectorXd out(a.rows());
    Eigen::Map<Eigen::VectorXd>(out.data(), a.rows()) = a.mat().rowwise().sum();
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(a.rows(), 1, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida](Tape& t) {
            const Node& s = t.node(self);
            t.grad_acc(ida).colwise() += Eigen::Map<const Eigen::VectorXd>(s.grad.data(), s.rows);
        };
    }
    return res;
}

// --- nn building blocks -----------------------------------------------------

inline Tensor softmax_rows(const Tensor& a) {
    Tape& tp = *a.tape();
    RowMat y = a.mat();
    for (long i = 0; i < y.rows(); ++i) {
        const double m = y.row(i).maxCoeff();
        y.row(i) = (y.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    Eigen::VectorXd out(a.size());
    MapM(out.data(), a.rows(), a.cols()) = y;
    const bool rg = tp.node(a.id()).requires_grad;
    Tensor res = tp.push(a.rows(), a.cols(), std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id();
        tp.node_mut(self).backward = [self, ida](Tape& t) {
            const Node& s = t.node(self);
            CMapM yv(s.value.data(), s.rows, s.cols);
            CMapM g(s.grad.data(), s.rows, s.cols);
            MapM ga = t.grad_acc(ida);
            for (long i = 0; i < s.rows; ++i) {
                const double dot = (g.row(i).array() * yv.row(i).array()).sum();
                ga.row(i).array() += yv.row(i).array() * (g.row(i).array() - dot);
            }
        };
    }
    return res;
}

// per-row normalization over features, with affine gamma (1,C) and beta (1,C)
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
    require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma must be 1xC");
    require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta must be 1xC");
    Tape& tp = *x.tape();
    const long R = x.rows(), C = x.cols();
    Eigen::VectorXd out(R * C);
    Eigen::VectorXd inv_std(R), mu(R);
    {
        CMapM xm = x.mat();
        CMapM gm = gamma.mat();
        CMapM bm = beta.mat();
        MapM om(out.data(), R, C);
        for (long i = 0; i < R; ++i) {
            mu[i] = xm.row(i).mean();
            const double var = (xm.row(i).array() - mu[i]).square().mean();
            inv_std[i] = 1.0 / std::sqrt(var + eps);
            om.row(i) = (((xm.row(i).array() - mu[i]) * inv_std[i]) * gm.row(0).array() +
                         bm.row(0).array())
                            .matrix();
        }
    }
    const bool rg = tp.node(x.id()).requires_grad || tp.node(gamma.id()).requires_grad ||
                    tp.node(beta.id()).requires_grad;
    Tensor res = tp.push(R, C, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), idx = x.id(), idg = gamma.id(), idb = beta.id();
        tp.node_mut(self).backward = [self, idx, idg, idb, mu, inv_std](Tape& t) {
            const Node& s = t.node(self);
            const Node& nx = t.node(idx);
            CMapM g(s.grad.data(), s.rows, s.cols);
            CMapM xm(nx.value.data(), nx.rows, nx.cols);
            CMapM gm(t.node(idg).value.data(), 1, s.cols);
            const long R2 = s.rows;
            for (long i = 0; i < R2; ++i) {
                const Eigen::RowVectorXd xhat =
                    ((xm.row(i).array() - mu[i]) * inv_std[i]).matrix();
                if (t.node(idg).requires_grad)
                    t.grad_acc(idg).row(0).array() += g.row(i).array() * xhat.array();
                if (t.node(idb).requires_grad) t.grad_acc(idb).row(0) += g.row(i);
                if (nx.requires_grad) {
                    const Eigen::RowVectorXd dy = (g.row(i).array() * gm.row(0).array()).matrix();
                    const double m1 = dy.mean();
                    const double m2 = (dy.array() * xhat.array()).mean();
                    t.grad_acc(idx).row(i).array() +=
                        inv_std[i] * (dy.array() - m1 - xhat.array() * m2);
                }
            }
        };
    }
    return res;
}

// rows of `table` selected by constant indices
inline Tensor embedding_lookup(const Tensor& table, const std::vector<long>& indices) {
    Tape& tp = *table.tape();
    const long C = table.cols();
    Eigen::VectorXd out(static_cast<long>(indices.size()) * C);
    MapM om(out.data(), static_cast<long>(indices.size()), C);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && indices[i] < table.rows(), "embedding_lookup: index out of range");
        om.row(static_cast<long>(i)) = table.mat().row(indices[i]);
    }
    const bool rg = tp.node(table.id()).requires_grad;
    Tensor res = tp.push(static_cast<long>(indices.size()), C, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), idt = table.id();
        tp.node_mut(self).backward = [self, idt, indices](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            MapM gt = t.grad_acc(idt);
            for (std::size_t i = 0; i < indices.size(); ++i)
                gt.row(indices[i]) += g.row(static_cast<long>(i));
        };
    }
    return res;
}

// --- losses -----------------------------------------------------------------

inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch("l1_loss", a, b);
    return mean(abs_op(sub(a, b)));
}

inline Tensor l2_loss(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch("l2_loss", a, b);
    return mean(square(sub(a, b)));
}

// --- batched small-matrix ops (sample-major token layout) --------------------

// scores[b*S+i, j] = q_row(b*S+i) . k_row(b*S+j); Q, K are (B*S, d)
inline Tensor batched_qk(const Tensor& q, const Tensor& k, long S) {
    if (q.rows() != k.rows() || q.cols() != k.cols()) detail::shape_mismatch("batched_qk", q, k);
    require(q.rows() % S == 0, "batched_qk: row count not divisible by token count");
    Tape& tp = *q.tape();
    const long B = q.rows() / S, d = q.cols();
    Eigen::VectorXd out(B * S * S);
    {
        CMapM qm = q.mat();
        CMapM km = k.mat();
        MapM om(out.data(), B * S, S);
        for (long b = 0; b < B; ++b)
            om.middleRows(b * S, S).noalias() =
                qm.middleRows(b * S, S) * km.middleRows(b * S, S).transpose();
    }
    const bool rg = tp.node(q.id()).requires_grad || tp.node(k.id()).requires_grad;
    Tensor res = tp.push(B * S, S, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), idq = q.id(), idk = k.id();
        tp.node_mut(self).backward = [self, idq, idk, S, d, B](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            CMapM qm(t.node(idq).value.data(), B * S, d);
            CMapM km(t.node(idk).value.data(), B * S, d);
            const bool nq = t.node(idq).requires_grad, nk = t.node(idk).requires_grad;
            MapM gq = nq ? t.grad_acc(idq) : MapM(nullptr, 0, 0);
            MapM gk = nk ? t.grad_acc(idk) : MapM(nullptr, 0, 0);
            for (long b = 0; b < B; ++b) {
                auto gb = g.middleRows(b * S, S);
                if (nq) gq.middleRows(b * S, S).noalias() += gb * km.middleRows(b * S, S);
                if (nk) gk.middleRows(b * S, S).noalias() += gb.transpose() * qm.middleRows(b * S, S);
            }
        };
    }
    return res;
}

// ctx (B*S, d) = per-sample attn (S,S) times values (S,d); attn is (B*S, S)
inline Tensor batched_av(const Tensor& attn, const Tensor& v, long S) {
    require(attn.cols() == S && attn.rows() % S == 0, "batched_av: bad attention shape");
    require(v.rows() == attn.rows(), "batched_av: value rows mismatch");
    Tape& tp = *attn.tape();
    const long B = attn.rows() / S, d = v.cols();
    Eigen::VectorXd out(B * S * d);
    {
        CMapM am = attn.mat();
        CMapM vm = v.mat();
        MapM om(out.data(), B * S, d);
        for (long b = 0; b < B; ++b)
            om.middleRows(b * S, S).noalias() = am.middleRows(b * S, S) * vm.middleRows(b * S, S);
    }
    const bool rg = tp.node(attn.id()).requires_grad || tp.node(v.id()).requires_grad;
    Tensor res = tp.push(B * S, d, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = attn.id(), idv = v.id();
        tp.node_mut(self).backward = [self, ida, idv, S, d, B](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            CMapM am(t.node(ida).value.data(), B * S, S);
            CMapM vm(t.node(idv).value.data(), B * S, d);
            const bool na = t.node(ida).requires_grad, nv = t.node(idv).requires_grad;
            MapM ga = na ? t.grad_acc(ida) : MapM(nullptr, 0, 0);
            MapM gv = nv ? t.grad_acc(idv) : MapM(nullptr, 0, 0);
            for (long b = 0; b < B; ++b) {
                auto gb = g.middleRows(b * S, S);
                if (na) ga.middleRows(b * S, S).noalias() += gb * vm.middleRows(b * S, S).transpose();
                if (nv) gv.middleRows(b * S, S).noalias() += am.middleRows(b * S, S).transpose() * gb;
            }
        };
    }
    return res;
}

// token `idx` of every sample: (B*S, d) -> (B, d)
inline Tensor take_token(const Tensor& seq, long S, long idx) {
    require(seq.rows() % S == 0, "take_token: row count not divisible by token count");
    require(idx >= 0 && idx < S, "take_token: token index out of range");
    Tape& tp = *seq.tape();
    const long B = seq.rows() / S, d = seq.cols();
    Eigen::VectorXd out(B * d);
    {
        CMapM sm = seq.mat();
        MapM om(out.data(), B, d);
        for (long b = 0; b < B; ++b) om.row(b) = sm.row(b * S + idx);
    }
    const bool rg = tp.node(seq.id()).requires_grad;
    Tensor res = tp.push(B, d, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ids = seq.id();
        tp.node_mut(self).backward = [self, ids, S, idx](Tape& t) {
            const Node& s = t.node(self);
            CMapM g(s.grad.data(), s.rows, s.cols);
            MapM gs = t.grad_acc(ids);
            for (long b = 0; b < s.rows; ++b) gs.row(b * S + idx) += g.row(b);
        };
    }
    return res;
}

// rowwise 3x3 matrix product; rows hold row-major 3x3 blocks
inline Tensor bmm33(const Tensor& a, const Tensor& b) {
    require(a.cols() == 9 && b.cols() == 9 && a.rows() == b.rows(), "bmm33: expects (N,9)x(N,9)");
    Tape& tp = *a.tape();
    const long N = a.rows();
    Eigen::VectorXd out(N * 9);
    auto mm = [](const double* x, const double* y, double* z) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                z[i * 3 + j] = x[i * 3] * y[j] + x[i * 3 + 1] * y[3 + j] + x[i * 3 + 2] * y[6 + j];
    };
    for (long n = 0; n < N; ++n) mm(a.value().data() + n * 9, b.value().data() + n * 9, out.data() + n * 9);
    const bool rg = tp.node(a.id()).requires_grad || tp.node(b.id()).requires_grad;
    Tensor res = tp.push(N, 9, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id(), idb = b.id();
        tp.node_mut(self).backward = [self, ida, idb](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& va = t.node(ida).value;
            const Eigen::VectorXd& vb = t.node(idb).value;
            const bool na = t.node(ida).requires_grad, nb = t.node(idb).requires_grad;
            MapM ga = na ? t.grad_acc(ida) : MapM(nullptr, 0, 0);
            MapM gb = nb ? t.grad_acc(idb) : MapM(nullptr, 0, 0);
            for (long n = 0; n < s.rows; ++n) {
                const double* g = s.grad.data() + n * 9;
                const double* x = va.data() + n * 9;
                const double* y = vb.data() + n * 9;
                // dA = G * B^T, dB = A^T * G
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        if (na) {
                            double acc = 0;
                            for (int k = 0; k < 3; ++k) acc += g[i * 3 + k] * y[j * 3 + k];
                            ga.data()[n * 9 + i * 3 + j] += acc;
                        }
                        if (nb) {
                            double acc = 0;
                            for (int k = 0; k < 3; ++k) acc += x[k * 3 + i] * g[k * 3 + j];
                            gb.data()[n * 9 + i * 3 + j] += acc;
                        }
                    }
            }
        };
    }
    return res;
}

// rowwise rotate: out_n = R_n * v_n for (N,9) rotations and (N,3) vectors
inline Tensor rot33_vec(const Tensor& r, const Tensor& v) {
    require(r.cols() == 9 && v.cols() == 3 && r.rows() == v.rows(), "rot33_vec: expects (N,9),(N,3)");
    Tape& tp = *r.tape();
    const long N = r.rows();
    Eigen::VectorXd out(N * 3);
    for (long n = 0; n < N; ++n) {
        const double* m = r.value().data() + n * 9;
        const double* x = v.value().data() + n * 3;
        for (int i = 0; i < 3; ++i)
            out[n * 3 + i] = m[i * 3] * x[0] + m[i * 3 + 1] * x[1] + m[i * 3 + 2] * x[2];
    }
    const bool rg = tp.node(r.id()).requires_grad || tp.node(v.id()).requires_grad;
    Tensor res = tp.push(N, 3, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), idr = r.id(), idv = v.id();
        tp.node_mut(self).backward = [self, idr, idv](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& vr = t.node(idr).value;
            const Eigen::VectorXd& vv = t.node(idv).value;
            const bool nr = t.node(idr).requires_grad, nv = t.node(idv).requires_grad;
            MapM gr = nr ? t.grad_acc(idr) : MapM(nullptr, 0, 0);
            MapM gv = nv ? t.grad_acc(idv) : MapM(nullptr, 0, 0);
            for (long n = 0; n < s.rows; ++n) {
                const double* g = s.grad.data() + n * 3;
                const double* m = vr.data() + n * 9;
                const double* x = vv.data() + n * 3;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        if (nr) gr.data()[n * 9 + i * 3 + j] += g[i] * x[j];
                        if (nv) gv.data()[n * 3 + j] += g[i] * m[i * 3 + j];
                    }
            }
        };
    }
    return res;
}

// rowwise cross product of (N,3) x (N,3)
inline Tensor cross_rows(const Tensor& a, const Tensor& b) {
    require(a.cols() == 3 && b.cols() == 3 && a.rows() == b.rows(), "cross_rows: expects (N,3)");
    Tape& tp = *a.tape();
    const long N = a.rows();
    Eigen::VectorXd out(N * 3);
    auto cr = [](const double* x, const double* y, double* z) {
        z[0] = x[1] * y[2] - x[2] * y[1];
        z[1] = x[2] * y[0] - x[0] * y[2];
        z[2] = x[0] * y[1] - x[1] * y[0];
    };
    for (long n = 0; n < N; ++n) cr(a.value().data() + n * 3, b.value().data() + n * 3, out.data() + n * 3);
    const bool rg = tp.node(a.id()).requires_grad || tp.node(b.id()).requires_grad;
    Tensor res = tp.push(N, 3, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), ida = a.id(), idb = b.id();
        tp.node_mut(self).backward = [self, ida, idb](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& va = t.node(ida).value;
            const Eigen::VectorXd& vb = t.node(idb).value;
            const bool na = t.node(ida).requires_grad, nb = t.node(idb).requires_grad;
            MapM ga = na ? t.grad_acc(ida) : MapM(nullptr, 0, 0);
            MapM gb = nb ? t.grad_acc(idb) : MapM(nullptr, 0, 0);
            auto cr2 = [](const double* x, const double* y, double* z) {
                z[0] += x[1] * y[2] - x[2] * y[1];
                z[1] += x[2] * y[0] - x[0] * y[2];
                z[2] += x[0] * y[1] - x[1] * y[0];
            };
            for (long n = 0; n < s.rows; ++n) {
                // d/da (a x b) applied to g is b x g; d/db is g x a
                if (na) cr2(vb.data() + n * 3, s.grad.data() + n * 3, ga.data() + n * 3);
                if (nb) cr2(s.grad.data() + n * 3, va.data() + n * 3, gb.data() + n * 3);
            }
        };
    }
    return res;
}

// rows of M are [r00..r22, t0..t2]; out_row = R * rest_row + t
inline Tensor affine_apply_rows(const Tensor& m, const Tensor& rest) {
    require(m.cols() == 12 && rest.cols() == 3 && m.rows() == rest.rows(),
            "affine_apply_rows: expects (V,12),(V,3)");
    Tape& tp = *m.tape();
    const long V = m.rows();
    Eigen::VectorXd out(V * 3);
    for (long n = 0; n < V; ++n) {
        const double* a = m.value().data() + n * 12;
        const double* x = rest.value().data() + n * 3;
        for (int i = 0; i < 3; ++i)
            out[n * 3 + i] = a[i * 3] * x[0] + a[i * 3 + 1] * x[1] + a[i * 3 + 2] * x[2] + a[9 + i];
    }
    const bool rg = tp.node(m.id()).requires_grad || tp.node(rest.id()).requires_grad;
    Tensor res = tp.push(V, 3, std::move(out), rg, nullptr);
    if (rg) {
        const long self = res.id(), idm = m.id(), idr = rest.id();
        tp.node_mut(self).backward = [self, idm, idr](Tape& t) {
            const Node& s = t.node(self);
            const Eigen::VectorXd& vm = t.node(idm).value;
            const Eigen::VectorXd& vr = t.node(idr).value;
            const bool nm = t.node(idm).requires_grad, nr = t.node(idr).requires_grad;
            MapM gm = nm ? t.grad_acc(idm) : MapM(nullptr, 0, 0);
            MapM gr = nr ? t.grad_acc(idr) : MapM(nullptr, 0, 0);
            for (long n = 0; n < s.rows; ++n) {
                const double* g = s.grad.data() + n * 3;
                const double* a = vm.data() + n * 12;
                const double* x = vr.data() + n * 3;
                for (int i = 0; i < 3; ++i) {
                    if (nm) {
                        for (int j = 0; j < 3; ++j) gm.data()[n * 12 + i * 3 + j] += g[i] * x[j];
                        gm.data()[n * 12 + 9 + i] += g[i];
                    }
                    if (nr)
                        for (int j = 0; j < 3; ++j) gr.data()[n * 3 + j] += g[i] * a[i * 3 + j];
                }
            }
        };
    }
    return res;
}

// Escape hatch for ops whose forward runs outside the tape (collision
// detection). The caller supplies the output value and a backward that maps
// d(out) into d(inputs) via Tape::grad_acc.
inline Tensor custom_op(Tape& tp, long rows, long cols, Eigen::VectorXd value,
                        const std::vector<Tensor>& inputs,
                        std::function<void(Tape&, long self)> backward) {
    bool rg = false;
    for (const Tensor& in : inputs) rg = rg || tp.node(in.id()).requires_grad;
    Tensor res = tp.push(rows, cols, std::move(value), rg, nullptr);
    if (rg && backward) {
        const long self = res.id();
        tp.node_mut(self).backward = [self, backward](Tape& t) { backward(t, self); };
    }
    return res;
}

// --- parameters and Adam -----------------------------------------------------

struct Param {
    std::string name;
    long rows = 0, cols = 0;
    Eigen::VectorXd value;

    Param() = default;
    Param(std::string n, long r, long c) : name(std::move(n)), rows(r), cols(c) {
        value = Eigen::VectorXd::Zero(r * c);
    }
};

// Bias-corrected Adam. Moment buffers are keyed by parameter order, which must
// stay stable across steps.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    std::vector<Eigen::VectorXd> m, v;

    void init(const std::vector<Param>& params) {
        m.clear();
        v.clear();
        for (const Param& p : params) {
            m.push_back(Eigen::VectorXd::Zero(p.value.size()));
            v.push_back(Eigen::VectorXd::Zero(p.value.size()));
        }
        step_count = 0;
    }
};

inline void adam_step(std::vector<Param>& params, const std::vector<Eigen::VectorXd>& grads,
                      AdamState& state) {
    require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
    if (state.m.size() != params.size()) state.init(params);
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = params[i];
        const Eigen::VectorXd& g = grads[i];
        require(g.size() == p.value.size(), "adam_step: gradient shape mismatch for " + p.name);
        if (!g.allFinite()) throw error("adam_step: non-finite gradient for parameter '" + p.name + "'");
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i].eval() + (1.0 - state.beta2) * g.cwiseProduct(g);
        const Eigen::VectorXd mhat = state.m[i] / bc1;
        const Eigen::VectorXd vhat = state.v[i] / bc2;
        p.value.array() -= state.lr * mhat.array() / (vhat.array().sqrt() + state.eps);
    }
}

}  // namespace scprior::ad
