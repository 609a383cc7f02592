#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualtl/tensor.hpp"

namespace dualtl {

/// Handle to a node on a Tape.
struct Var {
    std::uint32_t idx = UINT32_MAX;
    bool valid() const { return idx != UINT32_MAX; }
};

/// Reverse-mode tape over dense tensors.
///
/// Forward ops record a backward closure; backward() replays them in exact
/// reverse execution order. Each backward pass works on pass-local gradient
/// buffers and adds the result into the persistent gradients of grad-requiring
/// leaves, so running backward twice accumulates exactly twice the single-pass
/// gradient. Reductions sum in sequential index order, which makes forward
/// results bitwise deterministic for a fixed input.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    const Tensor& value(Var v) const { return nodes_[check(v)].value; }

    /// Accumulated gradient of a grad-requiring leaf (zeros before backward).
    const Tensor& grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (!n.requires_grad) throw std::logic_error("grad() on a node that does not require grad");
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    // ---- ops ----------------------------------------------------------------

    /// (m,k) x (k,p) -> (m,p)
    Var matmul(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        require_rank2(A, "matmul lhs");
        require_rank2(B, "matmul rhs");
        if (A.shape[1] != B.shape[0])
            throw std::invalid_argument("matmul: inner dims " + A.shape_str() + " x " + B.shape_str());
        const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        Tensor out({m, p});
        gemm_accum_nn(A.data.data(), B.data.data(), out.data.data(), m, k, p);
        return record({a, b}, std::move(out), [this, a, b, m, k, p](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            if (needs(a)) {
                Tensor& ga = pg.buf(a.idx, val(a).shape);
                gemm_accum_nt(go->data.data(), val(b).data.data(), ga.data.data(), m, p, k);
            }
            if (needs(b)) {
                Tensor& gb = pg.buf(b.idx, val(b).shape);
                gemm_accum_tn(val(a).data.data(), go->data.data(), gb.data.data(), k, m, p);
            }
        });
    }

    /// A * B^T : (m,k) x (p,k) -> (m,p)
    Var matmul_nt(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        require_rank2(A, "matmul_nt lhs");
        require_rank2(B, "matmul_nt rhs");
        if (A.shape[1] != B.shape[1])
            throw std::invalid_argument("matmul_nt: inner dims " + A.shape_str() + " x " + B.shape_str());
        const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[0];
        Tensor out({m, p});
        gemm_accum_nt(A.data.data(), B.data.data(), out.data.data(), m, k, p);
        return record({a, b}, std::move(out), [this, a, b, m, k, p](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            if (needs(a)) {
                Tensor& ga = pg.buf(a.idx, val(a).shape);
                gemm_accum_nn(go->data.data(), val(b).data.data(), ga.data.data(), m, p, k);
            }
            if (needs(b)) {
                Tensor& gb = pg.buf(b.idx, val(b).shape);
                gemm_accum_tn(go->data.data(), val(a).data.data(), gb.data.data(), p, m, k);
            }
        });
    }

    Var add(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            throw std::invalid_argument("add: shape " + A.shape_str() + " vs " + B.shape_str());
        Tensor out = A;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += B[i];
        return record({a, b}, std::move(out), [this, a, b](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            for (Var v : {a, b})
                if (needs(v)) {
                    Tensor& g = pg.buf(v.idx, val(v).shape);
                    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*go)[i];
                }
        });
    }

    /// (m,d) + row-broadcast vector (d)
    Var add_rowvec(Var a, Var bias) {
        const Tensor& A = val(a);
        const Tensor& B = val(bias);
        if (B.rank() != 1 || A.cols() != B.shape[0])
            throw std::invalid_argument("add_rowvec: " + A.shape_str() + " + " + B.shape_str());
        const std::size_t m = A.rows(), d = A.cols();
        Tensor out = A;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += B[j];
        return record({a, bias}, std::move(out), [this, a, bias, m, d](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            if (needs(a)) {
                Tensor& g = pg.buf(a.idx, val(a).shape);
                for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*go)[i];
            }
            if (needs(bias)) {
                Tensor& g = pg.buf(bias.idx, val(bias).shape);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) g[j] += go->data[i * d + j];
            }
        });
    }

    Var scale(Var a, double factor) {
        Tensor out = val(a);
        for (double& v : out.data) v *= factor;
        return record({a}, std::move(out), [this, a, factor](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(a)) return;
            Tensor& g = pg.buf(a.idx, val(a).shape);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * (*go)[i];
        });
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    Var softmax_rows(Var x) {
        const Tensor& X = val(x);
        if (X.cols() == 0) throw std::invalid_argument("softmax_rows: empty tensor");
        const std::size_t m = X.rows(), d = X.cols();
        Tensor out = X;
        for (std::size_t i = 0; i < m; ++i) {
            double* row = out.data.data() + i * d;
            double mx = row[0];
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < d; ++j) row[j] /= sum;
        }
        return record({x}, std::move(out), [this, x, m, d](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            const Tensor& Y = nodes_[s].value;
            Tensor& g = pg.buf(x.idx, val(x).shape);
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = Y.data.data() + i * d;
                const double* gy = go->data.data() + i * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                double* gx = g.data.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }

    /// Per-last-axis standardization followed by elementwise affine.
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const Tensor& X = val(x);
        const Tensor& G = val(gain);
        const Tensor& B = val(bias);
        const std::size_t d = X.cols(), m = X.rows();
        if (d == 0 || G.rank() != 1 || B.rank() != 1 || G.shape[0] != d || B.shape[0] != d)
            throw std::invalid_argument("layer_norm: bad shapes");
        Tensor out({m, d});
        Tensor xhat({m, d});
        std::vector<double> inv_sigma(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = X.data.data() + i * d;
            double mu = 0.0;
            for (std::size_t j = 0; j < d; ++j) mu += row[j];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_sigma[i] = inv;
            for (std::size_t j = 0; j < d; ++j) {
                const double xh = (row[j] - mu) * inv;
                xhat.data[i * d + j] = xh;
                out.data[i * d + j] = G[j] * xh + B[j];
            }
        }
        return record({x, gain, bias}, std::move(out),
                      [this, x, gain, bias, m, d, xhat = std::move(xhat),
                       inv_sigma = std::move(inv_sigma)](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            const Tensor& G = val(gain);
            if (needs(gain)) {
                Tensor& gg = pg.buf(gain.idx, G.shape);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        gg[j] += go->data[i * d + j] * xhat.data[i * d + j];
            }
            if (needs(bias)) {
                Tensor& gb = pg.buf(bias.idx, val(bias).shape);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += go->data[i * d + j];
            }
            if (needs(x)) {
                Tensor& gx = pg.buf(x.idx, val(x).shape);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* gy = go->data.data() + i * d;
                    const double* xh = xhat.data.data() + i * d;
                    double mean_t = 0.0, mean_tx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double t = gy[j] * G[j];
                        mean_t += t;
                        mean_tx += t * xh[j];
                    }
                    mean_t /= static_cast<double>(d);
                    mean_tx /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double t = gy[j] * G[j];
                        gx.data[i * d + j] += inv_sigma[i] * (t - mean_t - xh[j] * mean_tx);
                    }
                }
            }
        });
    }

    /// Exact Gaussian-CDF GELU: x * Phi(x).
    Var gelu(Var x) {
        const Tensor& X = val(x);
        Tensor out = X;
        for (double& v : out.data) v = v * gauss_cdf(v);
        return record({x}, std::move(out), [this, x](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            const Tensor& X = val(x);
            Tensor& g = pg.buf(x.idx, X.shape);
            constexpr double inv_sqrt_2pi = 0.39894228040143267794;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const double v = X[i];
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                g[i] += (*go)[i] * (gauss_cdf(v) + v * pdf);
            }
        });
    }

    Var relu(Var x) {
        Tensor out = val(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return record({x}, std::move(out), [this, x](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            const Tensor& X = val(x);
            Tensor& g = pg.buf(x.idx, X.shape);
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (X[i] > 0.0) g[i] += (*go)[i];
        });
    }

    /// Concatenate rank-2 tensors along axis 0 (rows) or axis 1 (cols).
    Var concat(const std::vector<Var>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no parts");
        if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
        for (Var p : parts) require_rank2(val(p), "concat part");
        const std::size_t fixed = axis == 0 ? val(parts[0]).shape[1] : val(parts[0]).shape[0];
        std::size_t total = 0;
        for (Var p : parts) {
            const Tensor& t = val(p);
            if ((axis == 0 ? t.shape[1] : t.shape[0]) != fixed)
                throw std::invalid_argument("concat: mismatched shapes");
            total += axis == 0 ? t.shape[0] : t.shape[1];
        }
        Tensor out(axis == 0 ? std::vector<std::size_t>{total, fixed}
                             : std::vector<std::size_t>{fixed, total});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& t = val(p);
            if (axis == 0) {
                std::copy(t.data.begin(), t.data.end(), out.data.begin() + off * fixed);
                off += t.shape[0];
            } else {
                for (std::size_t i = 0; i < fixed; ++i)
                    std::copy(t.data.begin() + i * t.shape[1], t.data.begin() + (i + 1) * t.shape[1],
                              out.data.begin() + i * total + off);
                off += t.shape[1];
            }
        }
        return record(parts, std::move(out),
                      [this, parts, axis, fixed, total](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go) return;
            std::size_t off = 0;
            for (Var p : parts) {
                const Tensor& t = val(p);
                const std::size_t n = axis == 0 ? t.shape[0] : t.shape[1];
                if (needs(p)) {
                    Tensor& g = pg.buf(p.idx, t.shape);
                    if (axis == 0) {
                        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go->data[off * fixed + i];
                    } else {
                        for (std::size_t i = 0; i < fixed; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                                g.data[i * n + j] += go->data[i * total + off + j];
                    }
                }
                off += n;
            }
        });
    }

    /// Rows [r0, r1) of a rank-2 tensor.
    Var slice_rows(Var x, std::size_t r0, std::size_t r1) {
        const Tensor& X = val(x);
        require_rank2(X, "slice_rows");
        if (r0 >= r1 || r1 > X.shape[0]) throw std::invalid_argument("slice_rows: bad range");
        const std::size_t d = X.shape[1];
        Tensor out({r1 - r0, d});
        std::copy(X.data.begin() + r0 * d, X.data.begin() + r1 * d, out.data.begin());
        return record({x}, std::move(out), [this, x, r0, d](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            Tensor& g = pg.buf(x.idx, val(x).shape);
            for (std::size_t i = 0; i < go->numel(); ++i) g.data[r0 * d + i] += (*go)[i];
        });
    }

    /// Mean over axis 0: (m,d) -> (1,d).
    Var mean_rows(Var x) {
        const Tensor& X = val(x);
        require_rank2(X, "mean_rows");
        const std::size_t m = X.shape[0], d = X.shape[1];
        Tensor out({1, d});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) out[j] += X.data[i * d + j];
        for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(m);
        return record({x}, std::move(out), [this, x, m, d](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            Tensor& g = pg.buf(x.idx, val(x).shape);
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) g.data[i * d + j] += inv * (*go)[j];
        });
    }

    /// Mean of all entries -> scalar {1}.
    Var mean_all(Var x) {
        const Tensor& X = val(x);
        const std::size_t n = X.numel();
        if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
        Tensor out({1});
        for (double v : X.data) out[0] += v;
        out[0] /= static_cast<double>(n);
        return record({x}, std::move(out), [this, x, n](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(x)) return;
            Tensor& g = pg.buf(x.idx, val(x).shape);
            const double d = (*go)[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += d;
        });
    }

    /// Negative Pearson loss 1 - r(pred, target) -> scalar {1}.
    ///
    /// Throws std::domain_error when either signal has (numerically) zero
    /// variance: the correlation is undefined there and silently emitting a
    /// value would hide a degenerate batch.
    Var pearson_loss(Var pred, const Tensor& target) {
        const Tensor& P = val(pred);
        const std::size_t n = P.numel();
        if (n != target.numel() || n < 2)
            throw std::invalid_argument("pearson_loss: " + P.shape_str() + " vs " + target.shape_str());
        double mp = 0.0, mg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mp += P[i];
            mg += target[i];
        }
        mp /= static_cast<double>(n);
        mg /= static_cast<double>(n);
        Tensor pc({n}), gc({n});
        double spp = 0.0, sgg = 0.0, spg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            pc[i] = P[i] - mp;
            gc[i] = target[i] - mg;
            spp += pc[i] * pc[i];
            sgg += gc[i] * gc[i];
            spg += pc[i] * gc[i];
        }
        const double sp = std::sqrt(spp), sg = std::sqrt(sgg);
        if (!(sp > 0.0) || !(sg > 0.0) || !std::isfinite(sp) || !std::isfinite(sg))
            throw std::domain_error("pearson_loss: constant or non-finite signal");
        const double r = spg / (sp * sg);
        Tensor out({1});
        out[0] = 1.0 - std::clamp(r, -1.0, 1.0);
        return record({pred}, std::move(out),
                      [this, pred, n, sp, sg, r, pc = std::move(pc),
                       gc = std::move(gc)](std::uint32_t s, PassGrads& pg) {
            const Tensor* go = pg.get(s);
            if (!go || !needs(pred)) return;
            Tensor& g = pg.buf(pred.idx, val(pred).shape);
            const double up = (*go)[0];
            for (std::size_t i = 0; i < n; ++i)
                g[i] -= up * (gc[i] / (sp * sg) - r * pc[i] / (sp * sp));
        });
    }

    /// Runs backward from a scalar output, accumulating into leaf gradients.
    void backward(Var out) {
        const Tensor& O = value(out);
        if (O.numel() != 1) throw std::invalid_argument("backward: output must be scalar");
        PassGrads pg(nodes_.size());
        pg.buf(out.idx, O.shape)[0] = 1.0;
        for (std::uint32_t idx = out.idx;; --idx) {
            Node& n = nodes_[idx];
            if (n.backprop && pg.get(idx)) n.backprop(idx, pg);
            if (idx == 0) break;
        }
        for (std::size_t i = 0; i <= out.idx; ++i) {
            Node& n = nodes_[i];
            if (n.requires_grad && !n.backprop) {
                const Tensor* g = pg.get(static_cast<std::uint32_t>(i));
                if (!g) continue;
                if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
                for (std::size_t j = 0; j < n.grad.numel(); ++j) n.grad[j] += (*g)[j];
            }
        }
    }

    static double gauss_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

    /// Pass-local gradient buffers, one slot per tape node.
    class PassGrads {
    public:
        explicit PassGrads(std::size_t n) : grads_(n) {}
        const Tensor* get(std::uint32_t idx) const {
            return grads_[idx].data.empty() ? nullptr : &grads_[idx];
        }
        Tensor& buf(std::uint32_t idx, const std::vector<std::size_t>& shape) {
            if (grads_[idx].data.empty()) grads_[idx] = Tensor(shape);
            return grads_[idx];
        }

    private:
        std::vector<Tensor> grads_;
    };

private:
    using Backprop = std::function<void(std::uint32_t self, PassGrads&)>;

    struct Node {
        Tensor value;
        Tensor grad;
        Backprop backprop;
        bool requires_grad = false;
    };

    // Deque so that references handed out by value()/grad() stay valid while
    // later ops keep growing the tape.
    std::deque<Node> nodes_;

    std::uint32_t check(Var v) const {
        if (!v.valid() || v.idx >= nodes_.size()) throw std::logic_error("invalid Var");
        return v.idx;
    }

    const Tensor& val(Var v) const { return nodes_[check(v)].value; }
    bool needs(Var v) const { return nodes_[v.idx].requires_grad; }

    static void require_rank2(const Tensor& t, const char* what) {
        if (t.rank() != 2) throw std::invalid_argument(std::string(what) + ": rank-2 tensor required");
    }

    Var push(Tensor value, bool requires_grad, Backprop backprop) {
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backprop), requires_grad});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Var record(const std::vector<Var>& inputs, Tensor out, Backprop backprop) {
        bool any = false;
        for (Var v : inputs) any = any || nodes_[check(v)].requires_grad;
        return push(std::move(out), any, any ? std::move(backprop) : nullptr);
    }
};

/// Central-difference check of a scalar-valued tensor function against the
/// tape gradient. `build` receives a fresh tape and the input leaf and must
/// return a scalar Var. Returns the max over coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <class BuildFn>
double grad_check(BuildFn&& build, const Tensor& x, double h) {
    Tensor analytic;
    {
        Tape tape;
        Var vx = tape.leaf(x, true);
        Var out = build(tape, vx);
        if (tape.value(out).numel() != 1) throw std::invalid_argument("grad_check: non-scalar output");
        if (!std::isfinite(tape.value(out)[0])) throw std::domain_error("grad_check: non-finite output");
        tape.backward(out);
        analytic = tape.grad(vx);
    }
    auto eval = [&](const Tensor& probe) {
        Tape tape;
        Var vx = tape.leaf(probe, false);
        const double v = tape.value(build(tape, vx))[0];
        if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite output");
        return v;
    };
    double max_rel = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + h;
        const double fp = eval(probe);
        probe[i] = x[i] - h;
        const double fm = eval(probe);
        probe[i] = x[i];
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace dualtl
