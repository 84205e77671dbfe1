#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "resident/graph.hpp"
#include "resident/threading.hpp"

namespace resident {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline NodeId add(Graph& g, NodeId a, NodeId b) {
    const Tensor& xa = g.value(a);
    const Tensor& xb = g.value(b);
    if (!xa.same_shape(xb))
        throw ContractError("add: shape mismatch " + shape_str(xa.shape) + " vs " +
                            shape_str(xb.shape));
    Tensor y(xa.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = xa.data[i] + xb.data[i];
    return g.add_node(std::move(y), {a, b}, "add", [a, b](Graph& gr, NodeId self) {
        const Tensor& gy = gr.node(self).grad;
        if (gr.needs_grad(a)) gr.accumulate(a, gy);
        if (gr.needs_grad(b)) gr.accumulate(b, gy);
    });
}

inline NodeId mul(Graph& g, NodeId a, NodeId b) {
    const Tensor& xa = g.value(a);
    const Tensor& xb = g.value(b);
    if (!xa.same_shape(xb))
        throw ContractError("mul: shape mismatch " + shape_str(xa.shape) + " vs " +
                            shape_str(xb.shape));
    Tensor y(xa.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = xa.data[i] * xb.data[i];
    return g.add_node(std::move(y), {a, b}, "mul", [a, b](Graph& gr, NodeId self) {
        const Tensor& gy = gr.node(self).grad;
        const Tensor& xa = gr.value(a);
        const Tensor& xb = gr.value(b);
        if (gr.needs_grad(a)) {
            Tensor& ga = gr.grad_buffer(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += gy.data[i] * xb.data[i];
        }
        if (gr.needs_grad(b)) {
            Tensor& gb = gr.grad_buffer(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb.data[i] += gy.data[i] * xa.data[i];
        }
    });
}

inline NodeId tanh_op(Graph& g, NodeId x) {
    Tensor y(g.value(x).shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = std::tanh(g.value(x).data[i]);
    return g.add_node(std::move(y), {x}, "tanh", [x](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const Tensor& gy = gr.node(self).grad;
        const Tensor& y = gr.value(self);
        Tensor& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < gx.numel(); ++i)
            gx.data[i] += gy.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

inline NodeId relu(Graph& g, NodeId x) {
    Tensor y(g.value(x).shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = std::max(0.0, g.value(x).data[i]);
    return g.add_node(std::move(y), {x}, "relu", [x](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const Tensor& gy = gr.node(self).grad;
        const Tensor& xv = gr.value(x);
        Tensor& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < gx.numel(); ++i)
            if (xv.data[i] > 0.0) gx.data[i] += gy.data[i];
    });
}

// y = x ⊙ mask, mask a plain (non-differentiated) tensor. Dropout applies a
// sampled mask through this; gradient checks can pass a frozen one.
inline NodeId apply_mask(Graph& g, NodeId x, Tensor mask) {
    const Tensor& xv = g.value(x);
    if (!xv.same_shape(mask))
        throw ContractError("apply_mask: mask shape " + shape_str(mask.shape) +
                            " does not match input " + shape_str(xv.shape));
    Tensor y(xv.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = xv.data[i] * mask.data[i];
    return g.add_node(std::move(y), {x}, "apply_mask",
                      [x, m = std::move(mask)](Graph& gr, NodeId self) {
                          if (!gr.needs_grad(x)) return;
                          const Tensor& gy = gr.node(self).grad;
                          Tensor& gx = gr.grad_buffer(x);
                          for (std::size_t i = 0; i < gx.numel(); ++i)
                              gx.data[i] += gy.data[i] * m.data[i];
                      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline NodeId sum_all(Graph& g, NodeId x) {
    double s = 0.0;
    for (double v : g.value(x).data) s += v;
    return g.add_node(Tensor::scalar(s), {x}, "sum", [x](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const double gy = gr.node(self).grad.data[0];
        Tensor& gx = gr.grad_buffer(x);
        for (double& v : gx.data) v += gy;
    });
}

// Σ w ⊙ x with fixed weights; the reduction used by gradient checks whose
// target op has a constant plain sum (softmax rows sum to 1).
inline NodeId weighted_sum(Graph& g, NodeId x, Tensor w) {
    const Tensor& xv = g.value(x);
    if (!xv.same_shape(w)) throw ContractError("weighted_sum: weight shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += w.data[i] * xv.data[i];
    return g.add_node(Tensor::scalar(s), {x}, "weighted_sum",
                      [x, w = std::move(w)](Graph& gr, NodeId self) {
                          if (!gr.needs_grad(x)) return;
                          const double gy = gr.node(self).grad.data[0];
                          Tensor& gx = gr.grad_buffer(x);
                          for (std::size_t i = 0; i < gx.numel(); ++i)
                              gx.data[i] += gy * w.data[i];
                      });
}

inline NodeId mean_all(Graph& g, NodeId x) {
    const std::size_t n = g.value(x).numel();
    double s = 0.0;
    for (double v : g.value(x).data) s += v;
    return g.add_node(Tensor::scalar(s / static_cast<double>(n)), {x}, "mean",
                      [x, n](Graph& gr, NodeId self) {
                          if (!gr.needs_grad(x)) return;
                          const double gy = gr.node(self).grad.data[0] / static_cast<double>(n);
                          Tensor& gx = gr.grad_buffer(x);
                          for (double& v : gx.data) v += gy;
                      });
}

// ---------------------------------------------------------------------------
// matrix product
// ---------------------------------------------------------------------------

inline NodeId matmul(Graph& g, NodeId a, NodeId b) {
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw ContractError("matmul: incompatible shapes " + shape_str(A.shape) + " and " +
                            shape_str(B.shape));
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor C(Shape{m, n});
    parallel_for(m, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            double* crow = &C.data[r * n];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = A.data[r * k + kk];
                const double* brow = &B.data[kk * n];
                for (std::size_t c = 0; c < n; ++c) crow[c] += av * brow[c];
            }
        }
    });
    return g.add_node(std::move(C), {a, b}, "matmul", [a, b, m, k, n](Graph& gr, NodeId self) {
        const Tensor& gy = gr.node(self).grad;
        const Tensor& A = gr.value(a);
        const Tensor& B = gr.value(b);
        if (gr.needs_grad(a)) {
            Tensor& ga = gr.grad_buffer(a);
            parallel_for(m, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        const double* gyr = &gy.data[r * n];
                        const double* brow = &B.data[kk * n];
                        for (std::size_t c = 0; c < n; ++c) s += gyr[c] * brow[c];
                        ga.data[r * k + kk] += s;
                    }
            });
        }
        if (gr.needs_grad(b)) {
            Tensor& gb = gr.grad_buffer(b);
            parallel_for(k, [&](std::size_t k0, std::size_t k1) {
                for (std::size_t kk = k0; kk < k1; ++kk) {
                    double* gbrow = &gb.data[kk * n];
                    for (std::size_t r = 0; r < m; ++r) {
                        const double av = A.data[r * k + kk];
                        const double* gyr = &gy.data[r * n];
                        for (std::size_t c = 0; c < n; ++c) gbrow[c] += av * gyr[c];
                    }
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

// channel concatenation along the last axis; leading dims must agree
inline NodeId concat_channels(Graph& g, NodeId a, NodeId b) {
    const Tensor& xa = g.value(a);
    const Tensor& xb = g.value(b);
    if (xa.rank() != xb.rank() || xa.rank() < 1)
        throw ContractError("concat_channels: rank mismatch");
    for (std::size_t i = 0; i + 1 < xa.rank(); ++i)
        if (xa.dim(i) != xb.dim(i))
            throw ContractError("concat_channels: leading dims differ: " + shape_str(xa.shape) +
                                " vs " + shape_str(xb.shape));
    const std::size_t ca = xa.shape.back(), cb = xb.shape.back();
    const std::size_t rows = xa.numel() / ca;
    Shape out_shape = xa.shape;
    out_shape.back() = ca + cb;
    Tensor y(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(&xa.data[r * ca], ca, &y.data[r * (ca + cb)]);
        std::copy_n(&xb.data[r * cb], cb, &y.data[r * (ca + cb) + ca]);
    }
    return g.add_node(std::move(y), {a, b}, "concat",
                      [a, b, ca, cb, rows](Graph& gr, NodeId self) {
                          const Tensor& gy = gr.node(self).grad;
                          if (gr.needs_grad(a)) {
                              Tensor& ga = gr.grad_buffer(a);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < ca; ++c)
                                      ga.data[r * ca + c] += gy.data[r * (ca + cb) + c];
                          }
                          if (gr.needs_grad(b)) {
                              Tensor& gb = gr.grad_buffer(b);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < cb; ++c)
                                      gb.data[r * cb + c] += gy.data[r * (ca + cb) + ca + c];
                          }
                      });
}

// picks one time step from (batch x seq x ch) -> (batch x ch), or
// (seq x ch) -> (ch)
inline NodeId select_time(Graph& g, NodeId x, std::size_t t) {
    const Tensor& xv = g.value(x);
    const SeqView v = seq_view(xv, "select_time");
    if (t >= v.seq) throw ContractError("select_time: index out of range");
    Tensor y(xv.rank() == 2 ? Shape{v.channels} : Shape{v.batch, v.channels});
    for (std::size_t b = 0; b < v.batch; ++b)
        std::copy_n(&xv.data[(b * v.seq + t) * v.channels], v.channels,
                    &y.data[b * v.channels]);
    return g.add_node(std::move(y), {x}, "select_time", [x, t, v](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const Tensor& gy = gr.node(self).grad;
        Tensor& gx = gr.grad_buffer(x);
        for (std::size_t b = 0; b < v.batch; ++b)
            for (std::size_t c = 0; c < v.channels; ++c)
                gx.data[(b * v.seq + t) * v.channels + c] += gy.data[b * v.channels + c];
    });
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

// row-wise softmax with max subtraction; input (K) or (rows x K)
inline NodeId softmax_rows(Graph& g, NodeId x) {
    const Tensor& xv = g.value(x);
    if (xv.rank() < 1 || xv.rank() > 2) throw ContractError("softmax_rows: rank must be 1 or 2");
    const std::size_t k = xv.shape.back();
    const std::size_t rows = xv.numel() / k;
    Tensor y(xv.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &xv.data[r * k];
        double* out = &y.data[r * k];
        double mx = in[0];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, in[c]);
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            out[c] = std::exp(in[c] - mx);
            denom += out[c];
        }
        for (std::size_t c = 0; c < k; ++c) out[c] /= denom;
    }
    return g.add_node(std::move(y), {x}, "softmax", [x, rows, k](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const Tensor& gy = gr.node(self).grad;
        const Tensor& p = gr.value(self);
        Tensor& gx = gr.grad_buffer(x);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* pr = &p.data[r * k];
            const double* gr_ = &gy.data[r * k];
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += gr_[c] * pr[c];
            for (std::size_t c = 0; c < k; ++c)
                gx.data[r * k + c] += pr[c] * (gr_[c] - dot);
        }
    });
}

constexpr double kProbFloor = 1e-12;

// mean over rows of -log(probs[row, gold]); probabilities are floored at
// 1e-12 before the log (a floored entry is treated as constant in backward)
inline NodeId cross_entropy_mean(Graph& g, NodeId probs, std::vector<std::int32_t> golds) {
    const Tensor& p = g.value(probs);
    if (p.numel() == 0) throw ContractError("cross_entropy: empty probabilities");
    const std::size_t k = p.shape.back();
    const std::size_t rows = p.numel() / k;
    if (golds.size() != rows)
        throw ContractError("cross_entropy: got " + std::to_string(golds.size()) +
                            " labels for " + std::to_string(rows) + " rows");
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::int32_t cls = golds[r];
        if (cls < 0 || static_cast<std::size_t>(cls) >= k)
            throw ContractError("cross_entropy: class index " + std::to_string(cls) +
                                " out of range for " + std::to_string(k) + " classes");
        total += -std::log(std::max(p.data[r * k + cls], kProbFloor));
    }
    return g.add_node(Tensor::scalar(total / static_cast<double>(rows)), {probs}, "cross_entropy",
                      [probs, golds = std::move(golds), k, rows](Graph& gr, NodeId self) {
                          if (!gr.needs_grad(probs)) return;
                          const double gy = gr.node(self).grad.data[0];
                          const Tensor& p = gr.value(probs);
                          Tensor& gp = gr.grad_buffer(probs);
                          for (std::size_t r = 0; r < rows; ++r) {
                              const double pv = p.data[r * k + golds[r]];
                              if (pv < kProbFloor) continue;
                              gp.data[r * k + golds[r]] +=
                                  gy * (-1.0 / (pv * static_cast<double>(rows)));
                          }
                      });
}

inline NodeId cross_entropy(Graph& g, NodeId probs, std::int32_t gold) {
    if (g.value(probs).rank() != 1) throw ContractError("cross_entropy: expected a rank-1 tensor");
    return cross_entropy_mean(g, probs, {gold});
}

}  // namespace resident
