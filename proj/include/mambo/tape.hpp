#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mambo/matrix.hpp"

namespace mambo {

// Reverse-mode tape over matrices. Ops are recorded in topological order, so
// the backward sweep is a single reverse walk. One backward per tape.
//
// Recurrent ops (scans) live in scans.hpp; they record a single fused node
// with a hand-derived adjoint so the tape stays small for long sequences.
template <typename R>
class Tape;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename R>
class Tape {
public:
    struct Node {
        Mat<R> value;
        Mat<R> grad;  // allocated lazily during backward
        std::function<void(Tape&)> backward;
        bool requires_grad = false;
    };

    Var leaf(Mat<R> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    const Mat<R>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    const Mat<R>& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

    // Accumulation target for v's gradient; allocates zeros on first touch.
    Mat<R>& grad_acc(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.empty() && n.value.size() > 0) n.grad = Mat<R>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool grad_present(Var v) const { return !nodes_[static_cast<std::size_t>(v.id)].grad.empty(); }

    void backward(Var root) {
        detail::require(value(root).rows() == 1 && value(root).cols() == 1,
                        "Tape::backward: root must be scalar (1x1)");
        grad_acc(root)(0, 0) = R(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && n.requires_grad && !n.grad.empty()) n.backward(*this);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- elementwise / structural ops ----

    Var add(Var a, Var b) {
        const Mat<R>&va = value(a), &vb = value(b);
        detail::require(va.same_shape(vb), "add: shape mismatch");
        Mat<R> out = va;
        detail::add_inplace(out, vb);
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) detail::add_inplace(t.grad_acc(a2), g);
            if (t.requires_grad(b2)) detail::add_inplace(t.grad_acc(b2), g);
        });
    }

    Var sub(Var a, Var b) {
        const Mat<R>&va = value(a), &vb = value(b);
        detail::require(va.same_shape(vb), "sub: shape mismatch");
        Mat<R> out = va;
        detail::axpy_inplace(out, R(-1), vb);
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) detail::add_inplace(t.grad_acc(a2), g);
            if (t.requires_grad(b2)) detail::axpy_inplace(t.grad_acc(b2), R(-1), g);
        });
    }

    Var mul(Var a, Var b) {  // Hadamard
        const Mat<R>&va = value(a), &vb = value(b);
        detail::require(va.same_shape(vb), "mul: shape mismatch");
        Mat<R> out(va.rows(), va.cols());
        for (index_t i = 0; i < out.size(); ++i) out.data()[i] = va.data()[i] * vb.data()[i];
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) {
                Mat<R>& ga = t.grad_acc(a2);
                const Mat<R>& vb2 = t.value(b2);
                for (index_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * vb2.data()[i];
            }
            if (t.requires_grad(b2)) {
                Mat<R>& gb = t.grad_acc(b2);
                const Mat<R>& va2 = t.value(a2);
                for (index_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * va2.data()[i];
            }
        });
    }

    Var scale(Var a, R c) {
        Mat<R> out = value(a);
        for (index_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
        return unary(std::move(out), a, [c](Tape& t, Var self, Var a2) {
            detail::axpy_inplace(t.grad_acc(a2), c, t.grad(self));
        });
    }

    // x (T x C) + b (1 x C), broadcast over rows
    Var add_row_broadcast(Var x, Var b) {
        const Mat<R>&vx = value(x), &vb = value(b);
        detail::require(vb.rows() == 1 && vb.cols() == vx.cols(), "add_row_broadcast: bias must be 1 x C");
        Mat<R> out = vx;
        for (index_t t = 0; t < out.rows(); ++t) {
            R* r = out.row(t);
            for (index_t j = 0; j < out.cols(); ++j) r[j] += vb(0, j);
        }
        return binary(std::move(out), x, b, [](Tape& t, Var self, Var x2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(x2)) detail::add_inplace(t.grad_acc(x2), g);
            if (t.requires_grad(b2)) {
                Mat<R>& gb = t.grad_acc(b2);
                for (index_t r = 0; r < g.rows(); ++r) {
                    const R* gr = g.row(r);
                    for (index_t j = 0; j < g.cols(); ++j) gb(0, j) += gr[j];
                }
            }
        });
    }

    // x (T x C) * r (1 x C), broadcast over rows
    Var mul_row_broadcast(Var x, Var r) {
        const Mat<R>&vx = value(x), &vr = value(r);
        detail::require(vr.rows() == 1 && vr.cols() == vx.cols(), "mul_row_broadcast: scale must be 1 x C");
        Mat<R> out = vx;
        for (index_t t = 0; t < out.rows(); ++t) {
            R* row = out.row(t);
            for (index_t j = 0; j < out.cols(); ++j) row[j] *= vr(0, j);
        }
        return binary(std::move(out), x, r, [](Tape& t, Var self, Var x2, Var r2) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& vx2 = t.value(x2);
            const Mat<R>& vr2 = t.value(r2);
            if (t.requires_grad(x2)) {
                Mat<R>& gx = t.grad_acc(x2);
                for (index_t row = 0; row < g.rows(); ++row)
                    for (index_t j = 0; j < g.cols(); ++j) gx(row, j) += g(row, j) * vr2(0, j);
            }
            if (t.requires_grad(r2)) {
                Mat<R>& gr = t.grad_acc(r2);
                for (index_t row = 0; row < g.rows(); ++row)
                    for (index_t j = 0; j < g.cols(); ++j) gr(0, j) += g(row, j) * vx2(row, j);
            }
        });
    }

    // T x H -> T x (H*reps), each entry repeated reps times along the row
    // (per-head scalars expanded to per-channel).
    Var repeat_cols(Var r, index_t reps) {
        const Mat<R>& vr = value(r);
        Mat<R> out(vr.rows(), vr.cols() * reps);
        for (index_t t = 0; t < vr.rows(); ++t)
            for (index_t h = 0; h < vr.cols(); ++h)
                for (index_t p = 0; p < reps; ++p) out(t, h * reps + p) = vr(t, h);
        return unary(std::move(out), r, [reps](Tape& t, Var self, Var r2) {
            const Mat<R>& g = t.grad(self);
            Mat<R>& gr = t.grad_acc(r2);
            for (index_t row = 0; row < gr.rows(); ++row)
                for (index_t h = 0; h < gr.cols(); ++h)
                    for (index_t p = 0; p < reps; ++p) gr(row, h) += g(row, h * reps + p);
        });
    }

    // ---- matmul family ----

    Var matmul(Var a, Var b) {
        Mat<R> out = detail::mm(value(a), value(b));
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) detail::mm_nt_acc(t.grad_acc(a2), g, t.value(b2));
            if (t.requires_grad(b2)) detail::mm_tn_acc(t.grad_acc(b2), t.value(a2), g);
        });
    }

    Var matmul_nt(Var a, Var b) {  // A * B^T
        Mat<R> out = detail::mm_nt(value(a), value(b));
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) detail::mm_acc(t.grad_acc(a2), g, t.value(b2));
            if (t.requires_grad(b2)) detail::mm_tn_acc(t.grad_acc(b2), g, t.value(a2));
        });
    }

    Var matmul_tn(Var a, Var b) {  // A^T * B
        Mat<R> out = detail::mm_tn(value(a), value(b));
        return binary(std::move(out), a, b, [](Tape& t, Var self, Var a2, Var b2) {
            const Mat<R>& g = t.grad(self);
            if (t.requires_grad(a2)) detail::mm_nt_acc(t.grad_acc(a2), t.value(b2), g);
            if (t.requires_grad(b2)) detail::mm_acc(t.grad_acc(b2), t.value(a2), g);
        });
    }

    // ---- nonlinearities ----

    Var silu(Var a) {
        return elementwise(a, [](R x) { return detail::silu(x); },
                           [](R x, R) {
                               const R s = detail::sigmoid(x);
                               return s + x * s * (R(1) - s);
                           });
    }

    Var sigmoid(Var a) {
        return elementwise(a, [](R x) { return detail::sigmoid(x); },
                           [](R, R y) { return y * (R(1) - y); });
    }

    Var tanh_op(Var a) {
        return elementwise(a, [](R x) { return std::tanh(x); },
                           [](R, R y) { return R(1) - y * y; });
    }

    Var softplus(Var a) {
        return elementwise(a, [](R x) { return detail::stable_softplus(x); },
                           [](R x, R) { return detail::sigmoid(x); });
    }

    Var exp_op(Var a) {
        return elementwise(a, [](R x) { return std::exp(x); }, [](R, R y) { return y; });
    }

    // Gradient is passed only strictly inside the clamp range.
    Var clamp(Var a, R lo, R hi) {
        return elementwise(a, [lo, hi](R x) { return x < lo ? lo : (x > hi ? hi : x); },
                           [lo, hi](R x, R) { return (x > lo && x < hi) ? R(1) : R(0); });
    }

    // ---- slicing ----

    Var slice_cols(Var a, index_t j0, index_t j1) {
        const Mat<R>& va = value(a);
        detail::require(0 <= j0 && j0 < j1 && j1 <= va.cols(), "slice_cols: bad range");
        Mat<R> out(va.rows(), j1 - j0);
        for (index_t t = 0; t < va.rows(); ++t)
            for (index_t j = j0; j < j1; ++j) out(t, j - j0) = va(t, j);
        return unary(std::move(out), a, [j0, j1](Tape& t, Var self, Var a2) {
            const Mat<R>& g = t.grad(self);
            Mat<R>& ga = t.grad_acc(a2);
            for (index_t r = 0; r < g.rows(); ++r)
                for (index_t j = j0; j < j1; ++j) ga(r, j) += g(r, j - j0);
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        detail::require(!parts.empty(), "concat_cols: empty parts");
        index_t cols = 0;
        const index_t rows = value(parts[0]).rows();
        for (Var p : parts) {
            detail::require(value(p).rows() == rows, "concat_cols: row mismatch");
            cols += value(p).cols();
        }
        Mat<R> out(rows, cols);
        index_t off = 0;
        bool rq = false;
        for (Var p : parts) {
            const Mat<R>& vp = value(p);
            for (index_t t = 0; t < rows; ++t)
                for (index_t j = 0; j < vp.cols(); ++j) out(t, off + j) = vp(t, j);
            off += vp.cols();
            rq = rq || requires_grad(p);
        }
        std::vector<Var> parts_copy = parts;
        Var self = push(std::move(out), rq, nullptr);
        set_backward(self, [parts_copy, self](Tape& t) {
            const Mat<R>& g = t.grad(self);
            index_t o = 0;
            for (Var p : parts_copy) {
                const index_t w = t.value(p).cols();
                if (t.requires_grad(p)) {
                    Mat<R>& gp = t.grad_acc(p);
                    for (index_t r = 0; r < g.rows(); ++r)
                        for (index_t j = 0; j < w; ++j) gp(r, j) += g(r, o + j);
                }
                o += w;
            }
        });
        return self;
    }

    Var reverse_rows(Var a) {
        Mat<R> out = detail::reversed_rows(value(a));
        return unary(std::move(out), a, [](Tape& t, Var self, Var a2) {
            Mat<R> rg = detail::reversed_rows(t.grad(self));
            detail::add_inplace(t.grad_acc(a2), rg);
        });
    }

    // ---- normalization / softmax ----

    // Per-frame RMS normalization with learned gain: y = x / sqrt(mean(x^2)+eps) * gain.
    Var rmsnorm_rows(Var x, Var gain, R eps) {
        const Mat<R>&vx = value(x), &vg = value(gain);
        detail::require(vg.rows() == 1 && vg.cols() == vx.cols(), "rmsnorm_rows: gain must be 1 x C");
        detail::require(eps >= R(0), "rmsnorm_rows: eps must be nonnegative");
        const index_t T = vx.rows(), C = vx.cols();
        Mat<R> out(T, C);
        Mat<R> inv_rms(T, 1);
        for (index_t t = 0; t < T; ++t) {
            const R* xr = vx.row(t);
            R ss = R(0);
            for (index_t j = 0; j < C; ++j) ss += xr[j] * xr[j];
            const R r = R(1) / std::sqrt(ss / static_cast<R>(C) + eps);
            inv_rms(t, 0) = r;
            R* yr = out.row(t);
            for (index_t j = 0; j < C; ++j) yr[j] = xr[j] * r * vg(0, j);
        }
        auto cache = std::make_shared<Mat<R>>(std::move(inv_rms));
        return binary(std::move(out), x, gain,
                      [cache](Tape& t, Var self, Var x2, Var g2) {
                          const Mat<R>& g = t.grad(self);
                          const Mat<R>& vx2 = t.value(x2);
                          const Mat<R>& vg2 = t.value(g2);
                          const index_t T2 = vx2.rows(), C2 = vx2.cols();
                          if (t.requires_grad(x2)) {
                              Mat<R>& gx = t.grad_acc(x2);
                              for (index_t r = 0; r < T2; ++r) {
                                  const R inv = (*cache)(r, 0);
                                  const R* xr = vx2.row(r);
                                  const R* gr = g.row(r);
                                  R dot = R(0);
                                  for (index_t j = 0; j < C2; ++j) dot += gr[j] * vg2(0, j) * xr[j];
                                  const R coef = inv * inv * inv * dot / static_cast<R>(C2);
                                  R* gxr = gx.row(r);
                                  for (index_t j = 0; j < C2; ++j)
                                      gxr[j] += inv * vg2(0, j) * gr[j] - coef * xr[j];
                              }
                          }
                          if (t.requires_grad(g2)) {
                              Mat<R>& gg = t.grad_acc(g2);
                              for (index_t r = 0; r < T2; ++r) {
                                  const R inv = (*cache)(r, 0);
                                  const R* xr = vx2.row(r);
                                  const R* gr = g.row(r);
                                  for (index_t j = 0; j < C2; ++j) gg(0, j) += gr[j] * xr[j] * inv;
                              }
                          }
                      });
    }

    Var softmax_rows(Var x) {
        const Mat<R>& vx = value(x);
        Mat<R> out(vx.rows(), vx.cols());
        for (index_t t = 0; t < vx.rows(); ++t) {
            const R* xr = vx.row(t);
            R m = xr[0];
            for (index_t j = 1; j < vx.cols(); ++j) m = std::max(m, xr[j]);
            R sum = R(0);
            R* yr = out.row(t);
            for (index_t j = 0; j < vx.cols(); ++j) {
                yr[j] = std::exp(xr[j] - m);
                sum += yr[j];
            }
            for (index_t j = 0; j < vx.cols(); ++j) yr[j] /= sum;
        }
        return unary(std::move(out), x, [](Tape& t, Var self, Var x2) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& y = t.value(self);
            Mat<R>& gx = t.grad_acc(x2);
            for (index_t r = 0; r < g.rows(); ++r) {
                const R* gr = g.row(r);
                const R* yr = y.row(r);
                R dot = R(0);
                for (index_t j = 0; j < g.cols(); ++j) dot += gr[j] * yr[j];
                R* gxr = gx.row(r);
                for (index_t j = 0; j < g.cols(); ++j) gxr[j] += (gr[j] - dot) * yr[j];
            }
        });
    }

    // Softmax over the rows of a T x 1 column (pooling weights).
    Var softmax_col(Var x) {
        const Mat<R>& vx = value(x);
        detail::require(vx.cols() == 1, "softmax_col: input must be T x 1");
        const index_t T = vx.rows();
        Mat<R> out(T, 1);
        R m = vx(0, 0);
        for (index_t t = 1; t < T; ++t) m = std::max(m, vx(t, 0));
        R sum = R(0);
        for (index_t t = 0; t < T; ++t) {
            out(t, 0) = std::exp(vx(t, 0) - m);
            sum += out(t, 0);
        }
        for (index_t t = 0; t < T; ++t) out(t, 0) /= sum;
        return unary(std::move(out), x, [](Tape& t, Var self, Var x2) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& y = t.value(self);
            Mat<R>& gx = t.grad_acc(x2);
            R dot = R(0);
            for (index_t r = 0; r < g.rows(); ++r) dot += g(r, 0) * y(r, 0);
            for (index_t r = 0; r < g.rows(); ++r) gx(r, 0) += (g(r, 0) - dot) * y(r, 0);
        });
    }

    // Per-row, per-head-segment L2 normalization; x is T x (H*S). Zero
    // segments stay zero (and pass no gradient).
    Var normalize_segments(Var x, index_t seg) {
        const Mat<R>& vx = value(x);
        detail::require(seg >= 1 && vx.cols() % seg == 0, "normalize_segments: bad segment size");
        Mat<R> out = vx;
        const index_t nseg = vx.cols() / seg;
        Mat<R> inv_norm(vx.rows(), nseg);
        for (index_t t = 0; t < vx.rows(); ++t) {
            R* r = out.row(t);
            for (index_t h = 0; h < nseg; ++h) {
                R* u = r + h * seg;
                R m = R(0);
                for (index_t j = 0; j < seg; ++j) m = std::max(m, std::abs(u[j]));
                if (m == R(0)) {
                    inv_norm(t, h) = R(0);
                    continue;
                }
                R ss = R(0);
                for (index_t j = 0; j < seg; ++j) {
                    const R s = u[j] / m;
                    ss += s * s;
                }
                const R n = m * std::sqrt(ss);
                inv_norm(t, h) = R(1) / n;
                for (index_t j = 0; j < seg; ++j) u[j] /= n;
            }
        }
        auto cache = std::make_shared<Mat<R>>(std::move(inv_norm));
        return unary(std::move(out), x, [cache, seg](Tape& t, Var self, Var x2) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& y = t.value(self);
            Mat<R>& gx = t.grad_acc(x2);
            const index_t nseg = y.cols() / seg;
            for (index_t r = 0; r < g.rows(); ++r) {
                for (index_t h = 0; h < nseg; ++h) {
                    const R inv = (*cache)(r, h);
                    if (inv == R(0)) continue;
                    const R* yr = y.row(r) + h * seg;
                    const R* gr = g.row(r) + h * seg;
                    R dot = R(0);
                    for (index_t j = 0; j < seg; ++j) dot += yr[j] * gr[j];
                    R* gxr = gx.row(r) + h * seg;
                    for (index_t j = 0; j < seg; ++j) gxr[j] += (gr[j] - yr[j] * dot) * inv;
                }
            }
        });
    }

    // Depthwise causal convolution over time, left-padded with zeros.
    // w is W x C (tap W-1 multiplies the current frame), b is 1 x C.
    Var causal_dwconv(Var x, Var w, Var b) {
        const Mat<R>&vx = value(x), &vw = value(w), &vb = value(b);
        detail::require(vw.cols() == vx.cols() && vb.rows() == 1 && vb.cols() == vx.cols(),
                        "causal_dwconv: kernel/bias width mismatch");
        const index_t T = vx.rows(), C = vx.cols(), W = vw.rows();
        Mat<R> out(T, C);
        for (index_t t = 0; t < T; ++t) {
            R* yr = out.row(t);
            for (index_t j = 0; j < C; ++j) yr[j] = vb(0, j);
            for (index_t wi = 0; wi < W; ++wi) {
                const index_t s = t - (W - 1) + wi;
                if (s < 0) continue;
                const R* xr = vx.row(s);
                const R* wr = vw.row(wi);
                for (index_t j = 0; j < C; ++j) yr[j] += wr[j] * xr[j];
            }
        }
        bool rq = requires_grad(x) || requires_grad(w) || requires_grad(b);
        Var self = push(std::move(out), rq, nullptr);
        set_backward(self, [x, w, b, self, W](Tape& t) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& vx2 = t.value(x);
            const Mat<R>& vw2 = t.value(w);
            const index_t T2 = vx2.rows(), C2 = vx2.cols();
            if (t.requires_grad(x)) {
                Mat<R>& gx = t.grad_acc(x);
                for (index_t tt = 0; tt < T2; ++tt) {
                    const R* gr = g.row(tt);
                    for (index_t wi = 0; wi < W; ++wi) {
                        const index_t s = tt - (W - 1) + wi;
                        if (s < 0) continue;
                        R* gxr = gx.row(s);
                        const R* wr = vw2.row(wi);
                        for (index_t j = 0; j < C2; ++j) gxr[j] += wr[j] * gr[j];
                    }
                }
            }
            if (t.requires_grad(w)) {
                Mat<R>& gw = t.grad_acc(w);
                for (index_t tt = 0; tt < T2; ++tt) {
                    const R* gr = g.row(tt);
                    for (index_t wi = 0; wi < W; ++wi) {
                        const index_t s = tt - (W - 1) + wi;
                        if (s < 0) continue;
                        const R* xr = vx2.row(s);
                        R* gwr = gw.row(wi);
                        for (index_t j = 0; j < C2; ++j) gwr[j] += gr[j] * xr[j];
                    }
                }
            }
            if (t.requires_grad(b)) {
                Mat<R>& gb = t.grad_acc(b);
                for (index_t tt = 0; tt < T2; ++tt) {
                    const R* gr = g.row(tt);
                    for (index_t j = 0; j < C2; ++j) gb(0, j) += gr[j];
                }
            }
        });
        return self;
    }

    // ---- generic node plumbing (used by fused ops in scans.hpp) ----

    Var push(Mat<R> value, bool requires_grad, std::function<void(Tape&)> backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void set_backward(Var v, std::function<void(Tape&)> fn) {
        nodes_[static_cast<std::size_t>(v.id)].backward = std::move(fn);
    }

private:
    template <typename F>
    Var unary(Mat<R> out, Var a, F fn) {
        Var self = push(std::move(out), requires_grad(a), nullptr);
        if (requires_grad(a))
            set_backward(self, [a, self, fn](Tape& t) { fn(t, self, a); });
        return self;
    }

    template <typename F>
    Var binary(Mat<R> out, Var a, Var b, F fn) {
        const bool rq = requires_grad(a) || requires_grad(b);
        Var self = push(std::move(out), rq, nullptr);
        if (rq)
            set_backward(self, [a, b, self, fn](Tape& t) { fn(t, self, a, b); });
        return self;
    }

    template <typename FwdF, typename BwdF>
    Var elementwise(Var a, FwdF f, BwdF df) {
        const Mat<R>& va = value(a);
        Mat<R> out(va.rows(), va.cols());
        for (index_t i = 0; i < out.size(); ++i) out.data()[i] = f(va.data()[i]);
        return unary(std::move(out), a, [df](Tape& t, Var self, Var a2) {
            const Mat<R>& g = t.grad(self);
            const Mat<R>& x = t.value(a2);
            const Mat<R>& y = t.value(self);
            Mat<R>& gx = t.grad_acc(a2);
            for (index_t i = 0; i < g.size(); ++i)
                gx.data()[i] += g.data()[i] * df(x.data()[i], y.data()[i]);
        });
    }

    std::vector<Node> nodes_;
};

}  // namespace mambo
