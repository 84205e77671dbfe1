#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "resident/ops.hpp"
#include "resident/rng.hpp"

namespace resident {

// Byte vocabulary: the 256 raw byte values plus a padding id.
constexpr std::int32_t kPadId = 256;
constexpr std::size_t kByteVocab = 257;

enum class LayerMode { Train, Infer };

// A padded batch of byte-id sequences, row-major (batch x len).
struct ByteBatch {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<std::int32_t> ids;

    std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * len + t]; }
};

struct ConvParams {
    Tensor W;  // (window x in_channels x out_channels)
    Tensor b;  // (out_channels)
};

struct BNParams {
    Tensor gamma, beta;              // (channels)
    Tensor running_mean, running_var;  // (channels), updated in Train mode
    double momentum = 0.9;
    double eps = 1e-5;
};

struct GRUParams {
    Tensor W_z, W_r, W_h;  // (input_dim x hidden)
    Tensor U_z, U_r, U_h;  // (hidden x hidden)
    Tensor b_z, b_r, b_h;  // (hidden)

    std::size_t input_dim() const { return W_z.dim(0); }
    std::size_t hidden() const { return b_z.dim(0); }
};

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

// Gathers table rows per byte id -> (batch x len x d_b). The PAD id always
// yields a zero row and receives no gradient; the PAD row of the table is a
// constant, not a trainable direction.
inline NodeId embed(Graph& g, const ByteBatch& ids, NodeId table) {
    const Tensor& tab = g.value(table);
    if (tab.rank() != 2 || tab.dim(0) != kByteVocab)
        throw ContractError("embed: table must be (257 x d_b), got " + shape_str(tab.shape));
    const std::size_t d = tab.dim(1);
    for (std::int32_t id : ids.ids)
        if (id < 0 || id > kPadId)
            throw ContractError("embed: byte id " + std::to_string(id) + " out of range");
    Tensor y(Shape{ids.batch, ids.len, d});
    for (std::size_t b = 0; b < ids.batch; ++b)
        for (std::size_t t = 0; t < ids.len; ++t) {
            const std::int32_t id = ids.at(b, t);
            if (id == kPadId) continue;  // stays zero
            std::copy_n(&tab.data[static_cast<std::size_t>(id) * d], d,
                        &y.data[(b * ids.len + t) * d]);
        }
    return g.add_node(std::move(y), {table}, "embed", [ids, table, d](Graph& gr, NodeId self) {
        if (!gr.needs_grad(table)) return;
        const Tensor& gy = gr.node(self).grad;
        Tensor& gt = gr.grad_buffer(table);
        for (std::size_t b = 0; b < ids.batch; ++b)
            for (std::size_t t = 0; t < ids.len; ++t) {
                const std::int32_t id = ids.at(b, t);
                if (id == kPadId) continue;
                const double* src = &gy.data[(b * ids.len + t) * d];
                double* dst = &gt.data[static_cast<std::size_t>(id) * d];
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
    });
}

// ---------------------------------------------------------------------------
// 1-d convolution, same-length output
// ---------------------------------------------------------------------------

// Position t sees inputs t-floor((k-1)/2) .. t+ceil((k-1)/2), zero padded;
// for the even window k=8 that is 3 to the left and 4 to the right.
inline NodeId conv1d_same(Graph& g, NodeId x, NodeId w, NodeId bias) {
    const Tensor& X = g.value(x);
    const Tensor& W = g.value(w);
    const Tensor& B = g.value(bias);
    const SeqView v = seq_view(X, "conv1d_same");
    if (W.rank() != 3) throw ContractError("conv1d_same: kernel must be rank 3");
    const std::size_t k = W.dim(0), cin = W.dim(1), cout = W.dim(2);
    if (v.channels != cin)
        throw ContractError("conv1d_same: input has " + std::to_string(v.channels) +
                            " channels, kernel expects " + std::to_string(cin));
    if (B.numel() != cout) throw ContractError("conv1d_same: bias length mismatch");
    const std::size_t pad_left = (k - 1) / 2;

    Tensor Y(seq_shape(X, v.seq, cout));
    parallel_for(v.batch * v.seq, [&](std::size_t i0, std::size_t i1) {
        std::vector<double> acc(cout);
        for (std::size_t idx = i0; idx < i1; ++idx) {
            const std::size_t b = idx / v.seq, t = idx % v.seq;
            for (std::size_t o = 0; o < cout; ++o) acc[o] = B.data[o];
            for (std::size_t dt = 0; dt < k; ++dt) {
                const std::size_t tt = t + dt - pad_left;  // wraps below 0; checked vs seq
                if (tt >= v.seq) continue;
                const double* xrow = &X.data[(b * v.seq + tt) * cin];
                const double* wrow = &W.data[dt * cin * cout];
                for (std::size_t i = 0; i < cin; ++i) {
                    const double xv = xrow[i];
                    const double* wr = wrow + i * cout;
                    for (std::size_t o = 0; o < cout; ++o) acc[o] += xv * wr[o];
                }
            }
            std::copy_n(acc.data(), cout, &Y.data[idx * cout]);
        }
    });

    return g.add_node(
        std::move(Y), {x, w, bias},
        "conv1d_same", [x, w, bias, v, k, cin, cout, pad_left](Graph& gr, NodeId self) {
            const Tensor& gy = gr.node(self).grad;
            const Tensor& X = gr.value(x);
            const Tensor& W = gr.value(w);
            if (gr.needs_grad(x)) {
                Tensor& gx = gr.grad_buffer(x);
                parallel_for(v.batch * v.seq, [&](std::size_t i0, std::size_t i1) {
                    for (std::size_t idx = i0; idx < i1; ++idx) {
                        const std::size_t b = idx / v.seq, s = idx % v.seq;
                        double* gxrow = &gx.data[idx * cin];
                        for (std::size_t dt = 0; dt < k; ++dt) {
                            const std::size_t t = s + pad_left - dt;
                            if (t >= v.seq) continue;
                            const double* gyrow = &gy.data[(b * v.seq + t) * cout];
                            const double* wrow = &W.data[dt * cin * cout];
                            for (std::size_t i = 0; i < cin; ++i) {
                                double s2 = 0.0;
                                const double* wr = wrow + i * cout;
                                for (std::size_t o = 0; o < cout; ++o) s2 += wr[o] * gyrow[o];
                                gxrow[i] += s2;
                            }
                        }
                    }
                });
            }
            if (gr.needs_grad(w)) {
                Tensor& gw = gr.grad_buffer(w);
                parallel_for(k * cin, [&](std::size_t j0, std::size_t j1) {
                    for (std::size_t j = j0; j < j1; ++j) {
                        const std::size_t dt = j / cin, i = j % cin;
                        double* gwrow = &gw.data[(dt * cin + i) * cout];
                        for (std::size_t b = 0; b < v.batch; ++b)
                            for (std::size_t t = 0; t < v.seq; ++t) {
                                const std::size_t tt = t + dt - pad_left;
                                if (tt >= v.seq) continue;
                                const double xv = X.data[(b * v.seq + tt) * cin + i];
                                if (xv == 0.0) continue;
                                const double* gyrow = &gy.data[(b * v.seq + t) * cout];
                                for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xv * gyrow[o];
                            }
                    }
                });
            }
            if (gr.needs_grad(bias)) {
                Tensor& gb = gr.grad_buffer(bias);
                for (std::size_t bt = 0; bt < v.batch * v.seq; ++bt) {
                    const double* gyrow = &gy.data[bt * cout];
                    for (std::size_t o = 0; o < cout; ++o) gb.data[o] += gyrow[o];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

struct BNRunningStats {
    Tensor* mean = nullptr;
    Tensor* var = nullptr;
};

// Train mode normalizes with per-channel statistics over batch and sequence
// positions (population variance) and, when `update` points at running
// buffers, folds them in with an exponential moving average. Infer mode uses
// the provided running statistics only. The running buffers given by
// `running` are read in Infer mode and never differentiated.
inline NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, const Tensor& running_mean,
                         const Tensor& running_var, LayerMode mode, double momentum, double eps,
                         BNRunningStats update = {}) {
    const Tensor& X = g.value(x);
    const SeqView v = seq_view(X, "batch_norm");
    const std::size_t C = v.channels;
    if (g.value(gamma).numel() != C || g.value(beta).numel() != C)
        throw ContractError("batch_norm: gamma/beta length mismatch");
    const std::size_t N = v.batch * v.seq;

    Tensor mean(Shape{C}), invstd(Shape{C});
    if (mode == LayerMode::Train) {
        if (N < 2) throw ContractError("batch_norm: Train mode needs at least 2 samples");
        Tensor var(Shape{C});
        for (std::size_t bt = 0; bt < N; ++bt) {
            const double* row = &X.data[bt * C];
            for (std::size_t c = 0; c < C; ++c) mean.data[c] += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) mean.data[c] /= static_cast<double>(N);
        for (std::size_t bt = 0; bt < N; ++bt) {
            const double* row = &X.data[bt * C];
            for (std::size_t c = 0; c < C; ++c) {
                const double d = row[c] - mean.data[c];
                var.data[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < C; ++c) var.data[c] /= static_cast<double>(N);
        for (std::size_t c = 0; c < C; ++c) invstd.data[c] = 1.0 / std::sqrt(var.data[c] + eps);
        if (update.mean && update.var) {
            for (std::size_t c = 0; c < C; ++c) {
                update.mean->data[c] = momentum * update.mean->data[c] +
                                       (1.0 - momentum) * mean.data[c];
                update.var->data[c] = momentum * update.var->data[c] +
                                      (1.0 - momentum) * var.data[c];
            }
        }
    } else {
        if (running_mean.numel() != C || running_var.numel() != C)
            throw ContractError("batch_norm: running stats length mismatch");
        mean.data.assign(running_mean.data.begin(), running_mean.data.end());
        for (std::size_t c = 0; c < C; ++c)
            invstd.data[c] = 1.0 / std::sqrt(running_var.data[c] + eps);
    }

    const Tensor& G = g.value(gamma);
    const Tensor& Bt = g.value(beta);
    Tensor Y(X.shape);
    parallel_for(N, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t bt = i0; bt < i1; ++bt) {
            const double* row = &X.data[bt * C];
            double* out = &Y.data[bt * C];
            for (std::size_t c = 0; c < C; ++c)
                out[c] = G.data[c] * (row[c] - mean.data[c]) * invstd.data[c] + Bt.data[c];
        }
    });

    const bool train = mode == LayerMode::Train;
    return g.add_node(
        std::move(Y), {x, gamma, beta}, "batch_norm",
        [x, gamma, beta, v, C, N, train, mean = std::move(mean),
         invstd = std::move(invstd)](Graph& gr, NodeId self) {
            const Tensor& gy = gr.node(self).grad;
            const Tensor& X = gr.value(x);
            const Tensor& G = gr.value(gamma);
            // per-channel reductions: sum gy and sum gy*xhat
            Tensor sum_gy(Shape{C}), sum_gy_xhat(Shape{C});
            for (std::size_t bt = 0; bt < N; ++bt) {
                const double* gyr = &gy.data[bt * C];
                const double* xr = &X.data[bt * C];
                for (std::size_t c = 0; c < C; ++c) {
                    sum_gy.data[c] += gyr[c];
                    sum_gy_xhat.data[c] += gyr[c] * (xr[c] - mean.data[c]) * invstd.data[c];
                }
            }
            if (gr.needs_grad(gamma)) gr.accumulate(gamma, sum_gy_xhat);
            if (gr.needs_grad(beta)) gr.accumulate(beta, sum_gy);
            if (gr.needs_grad(x)) {
                Tensor& gx = gr.grad_buffer(x);
                if (train) {
                    const double n = static_cast<double>(N);
                    parallel_for(N, [&](std::size_t i0, std::size_t i1) {
                        for (std::size_t bt = i0; bt < i1; ++bt) {
                            const double* gyr = &gy.data[bt * C];
                            const double* xr = &X.data[bt * C];
                            double* gxr = &gx.data[bt * C];
                            for (std::size_t c = 0; c < C; ++c) {
                                const double xhat = (xr[c] - mean.data[c]) * invstd.data[c];
                                gxr[c] += G.data[c] * invstd.data[c] *
                                          (gyr[c] - sum_gy.data[c] / n -
                                           xhat * sum_gy_xhat.data[c] / n);
                            }
                        }
                    });
                } else {
                    parallel_for(N, [&](std::size_t i0, std::size_t i1) {
                        for (std::size_t bt = i0; bt < i1; ++bt) {
                            const double* gyr = &gy.data[bt * C];
                            double* gxr = &gx.data[bt * C];
                            for (std::size_t c = 0; c < C; ++c)
                                gxr[c] += gyr[c] * G.data[c] * invstd.data[c];
                        }
                    });
                }
            }
        });
}

inline NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, const BNParams& p,
                         LayerMode mode, BNRunningStats update = {}) {
    return batch_norm(g, x, gamma, beta, p.running_mean, p.running_var, mode, p.momentum, p.eps,
                      update);
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// inverted-dropout mask: entries are 0 with probability p, else 1/(1-p)
inline Tensor dropout_mask(Shape shape, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(p));
    Tensor m(std::move(shape));
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& v : m.data) v = rng.bernoulli(p) ? 0.0 : keep_scale;
    return m;
}

inline NodeId dropout(Graph& g, NodeId x, double p, LayerMode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(p));
    if (mode == LayerMode::Infer || p == 0.0) return x;
    return apply_mask(g, x, dropout_mask(g.value(x).shape, p, rng));
}

// ---------------------------------------------------------------------------
// max pooling
// ---------------------------------------------------------------------------

// non-overlapping windows of size k, per channel; trailing remainder dropped
inline NodeId max_pool1d(Graph& g, NodeId x, std::size_t k) {
    const Tensor& X = g.value(x);
    const SeqView v = seq_view(X, "max_pool1d");
    if (k < 1) throw ContractError("max_pool1d: pool size must be >= 1");
    if (v.seq < k)
        throw ContractError("max_pool1d: sequence length " + std::to_string(v.seq) +
                            " shorter than pool size " + std::to_string(k));
    const std::size_t out_seq = v.seq / k;
    Tensor Y(seq_shape(X, out_seq, v.channels));
    auto argmax = std::make_shared<std::vector<std::size_t>>(Y.numel());
    for (std::size_t b = 0; b < v.batch; ++b)
        for (std::size_t t = 0; t < out_seq; ++t)
            for (std::size_t c = 0; c < v.channels; ++c) {
                std::size_t best = (b * v.seq + t * k) * v.channels + c;
                double mx = X.data[best];
                for (std::size_t dt = 1; dt < k; ++dt) {
                    const std::size_t at = (b * v.seq + t * k + dt) * v.channels + c;
                    if (X.data[at] > mx) {  // ties keep the first position
                        mx = X.data[at];
                        best = at;
                    }
                }
                const std::size_t oi = (b * out_seq + t) * v.channels + c;
                Y.data[oi] = mx;
                (*argmax)[oi] = best;
            }
    return g.add_node(std::move(Y), {x}, "max_pool1d", [x, argmax](Graph& gr, NodeId self) {
        if (!gr.needs_grad(x)) return;
        const Tensor& gy = gr.node(self).grad;
        Tensor& gx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx.data[(*argmax)[i]] += gy.data[i];
    });
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

struct GruNodes {
    NodeId W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;
};

// Variational-style dropout for the recurrence: one mask on x_t for every
// step (input connections) and one on h_{t-1} as it enters the gates
// (recurrent connections). Masks are per batch row and fixed across time.
struct GruDropoutMasks {
    Tensor input;      // (batch x input_dim)
    Tensor recurrent;  // (batch x hidden)
};

namespace detail {

struct GruSaved {
    Tensor z, r, c;  // gate and candidate activations, (batch x seq x hidden)
    Tensor mask_x, mask_h;  // empty when dropout is off
    bool reversed = false;
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

// Single-direction GRU scan returning all states (batch x seq x hidden), one
// graph node with full backward-through-time. `reversed` consumes the
// sequence back to front; the state for position t is stored at row t either
// way. Gates:
//   z_t = sigma(W_z'x_t + U_z'h_{t-1} + b_z)
//   r_t = sigma(W_r'x_t + U_r'h_{t-1} + b_r)
//   c_t = tanh(W_h'x_t + U_h'(r_t . h_{t-1}) + b_h)
//   h_t = (1 - z_t) . h_{t-1} + z_t . c_t
inline NodeId gru_sequence(Graph& g, NodeId x, const GruNodes& p, NodeId h0, bool reversed,
                           const GruDropoutMasks* masks = nullptr) {
    const Tensor& X = g.value(x);
    const SeqView v = seq_view(X, "gru_sequence");
    const std::size_t B = v.batch, T = v.seq, D = v.channels;
    if (T == 0) throw ContractError("gru_sequence: empty sequence");
    const Tensor& Wz = g.value(p.W_z);
    const std::size_t H = g.value(p.b_z).numel();
    auto expect = [&](NodeId id, std::size_t r, std::size_t c, const char* name) {
        const Tensor& t = g.value(id);
        if (t.rank() != 2 || t.dim(0) != r || t.dim(1) != c)
            throw ContractError(std::string("gru_sequence: ") + name + " must be (" +
                                std::to_string(r) + " x " + std::to_string(c) + "), got " +
                                shape_str(t.shape));
    };
    expect(p.W_z, D, H, "W_z");
    expect(p.W_r, D, H, "W_r");
    expect(p.W_h, D, H, "W_h");
    expect(p.U_z, H, H, "U_z");
    expect(p.U_r, H, H, "U_r");
    expect(p.U_h, H, H, "U_h");
    if (g.value(p.b_r).numel() != H || g.value(p.b_h).numel() != H)
        throw ContractError("gru_sequence: bias length mismatch");
    if (g.value(h0).numel() != H) throw ContractError("gru_sequence: h0 length mismatch");
    (void)Wz;
    if (masks &&
        (masks->input.numel() != B * D || masks->recurrent.numel() != B * H))
        throw ContractError("gru_sequence: dropout mask shape mismatch");

    auto saved = std::make_shared<detail::GruSaved>();
    saved->z = Tensor(Shape{B, T, H});
    saved->r = Tensor(Shape{B, T, H});
    saved->c = Tensor(Shape{B, T, H});
    saved->reversed = reversed;
    if (masks) {
        saved->mask_x = masks->input;
        saved->mask_h = masks->recurrent;
    }

    // x W products for all steps up front; the recurrence then only touches
    // the (hidden x hidden) matrices
    Tensor wx(Shape{B, T, 3 * H});
    {
        const Tensor& Wzv = g.value(p.W_z);
        const Tensor& Wrv = g.value(p.W_r);
        const Tensor& Whv = g.value(p.W_h);
        parallel_for(B * T, [&](std::size_t i0, std::size_t i1) {
            for (std::size_t bt = i0; bt < i1; ++bt) {
                const std::size_t b = bt / T;
                const double* xrow = &X.data[bt * D];
                double* out = &wx.data[bt * 3 * H];
                for (std::size_t i = 0; i < D; ++i) {
                    double xv = xrow[i];
                    if (saved->mask_x.numel()) xv *= saved->mask_x.data[b * D + i];
                    if (xv == 0.0) continue;
                    const double* wz = &Wzv.data[i * H];
                    const double* wr = &Wrv.data[i * H];
                    const double* wh = &Whv.data[i * H];
                    for (std::size_t j = 0; j < H; ++j) {
                        out[j] += xv * wz[j];
                        out[H + j] += xv * wr[j];
                        out[2 * H + j] += xv * wh[j];
                    }
                }
            }
        });
    }

    Tensor states(Shape{B, T, H});
    const Tensor& Uz = g.value(p.U_z);
    const Tensor& Ur = g.value(p.U_r);
    const Tensor& Uh = g.value(p.U_h);
    const Tensor& bz = g.value(p.b_z);
    const Tensor& br = g.value(p.b_r);
    const Tensor& bh = g.value(p.b_h);
    const Tensor& h0v = g.value(h0);

    parallel_for(B, [&](std::size_t b0, std::size_t b1) {
        std::vector<double> h(H), hm(H), acc_z(H), acc_r(H), acc_c(H), rh(H);
        for (std::size_t b = b0; b < b1; ++b) {
            std::copy_n(h0v.data.data(), H, h.data());
            for (std::size_t n = 0; n < T; ++n) {
                const std::size_t t = reversed ? T - 1 - n : n;
                const double* wxr = &wx.data[(b * T + t) * 3 * H];
                for (std::size_t j = 0; j < H; ++j) {
                    hm[j] = h[j];
                    if (saved->mask_h.numel()) hm[j] *= saved->mask_h.data[b * H + j];
                    acc_z[j] = wxr[j] + bz.data[j];
                    acc_r[j] = wxr[H + j] + br.data[j];
                    acc_c[j] = wxr[2 * H + j] + bh.data[j];
                }
                for (std::size_t i = 0; i < H; ++i) {
                    const double hv = hm[i];
                    if (hv == 0.0) continue;
                    const double* uz = &Uz.data[i * H];
                    const double* ur = &Ur.data[i * H];
                    for (std::size_t j = 0; j < H; ++j) {
                        acc_z[j] += hv * uz[j];
                        acc_r[j] += hv * ur[j];
                    }
                }
                double* zrow = &saved->z.data[(b * T + t) * H];
                double* rrow = &saved->r.data[(b * T + t) * H];
                double* crow = &saved->c.data[(b * T + t) * H];
                for (std::size_t j = 0; j < H; ++j) {
                    zrow[j] = detail::sigmoid(acc_z[j]);
                    rrow[j] = detail::sigmoid(acc_r[j]);
                    rh[j] = rrow[j] * hm[j];
                }
                for (std::size_t i = 0; i < H; ++i) {
                    const double rv = rh[i];
                    if (rv == 0.0) continue;
                    const double* uh = &Uh.data[i * H];
                    for (std::size_t j = 0; j < H; ++j) acc_c[j] += rv * uh[j];
                }
                double* hrow = &states.data[(b * T + t) * H];
                for (std::size_t j = 0; j < H; ++j) {
                    crow[j] = std::tanh(acc_c[j]);
                    h[j] = (1.0 - zrow[j]) * h[j] + zrow[j] * crow[j];
                    hrow[j] = h[j];
                }
            }
        }
    });

    Shape out_shape = X.rank() == 2 ? Shape{T, H} : Shape{B, T, H};
    states.shape = out_shape;

    return g.add_node(
        std::move(states), {x, p.W_z, p.W_r, p.W_h, p.U_z, p.U_r, p.U_h, p.b_z, p.b_r, p.b_h, h0},
        "gru_sequence", [x, p, h0, saved, B, T, D, H](Graph& gr, NodeId self) {
            const Tensor& gy = gr.node(self).grad;
            const Tensor& X = gr.value(x);
            const Tensor& states = gr.value(self);
            const Tensor& Uz = gr.value(p.U_z);
            const Tensor& Ur = gr.value(p.U_r);
            const Tensor& Uh = gr.value(p.U_h);
            const Tensor& h0v = gr.value(h0);
            const bool rev = saved->reversed;
            const bool has_mx = saved->mask_x.numel() > 0;
            const bool has_mh = saved->mask_h.numel() > 0;

            // previous state feeding position t (in scan order)
            auto prev_state = [&](std::size_t b, std::size_t t, std::size_t j) -> double {
                if (!rev) return t == 0 ? h0v.data[j] : states.data[(b * T + t - 1) * H + j];
                return t == T - 1 ? h0v.data[j] : states.data[(b * T + t + 1) * H + j];
            };
            auto hm_at = [&](std::size_t b, std::size_t t, std::size_t j) -> double {
                double v = prev_state(b, t, j);
                if (has_mh) v *= saved->mask_h.data[b * H + j];
                return v;
            };

            Tensor dz(Shape{B, T, H}), dr(Shape{B, T, H}), dc(Shape{B, T, H});
            Tensor dh0_rows(Shape{B, H});

            // per-example chains through time; every (b, t) cell of the
            // pre-activation deltas is written exactly once
            parallel_for(B, [&](std::size_t b0, std::size_t b1) {
                std::vector<double> dh(H), dhm(H), drhm(H);
                for (std::size_t b = b0; b < b1; ++b) {
                    std::fill(dh.begin(), dh.end(), 0.0);
                    for (std::size_t n = T; n-- > 0;) {
                        const std::size_t t = rev ? T - 1 - n : n;
                        const double* gyr = &gy.data[(b * T + t) * H];
                        const double* zr = &saved->z.data[(b * T + t) * H];
                        const double* rr = &saved->r.data[(b * T + t) * H];
                        const double* cr = &saved->c.data[(b * T + t) * H];
                        double* dzr = &dz.data[(b * T + t) * H];
                        double* drr = &dr.data[(b * T + t) * H];
                        double* dcr = &dc.data[(b * T + t) * H];
                        for (std::size_t j = 0; j < H; ++j) {
                            dh[j] += gyr[j];
                            const double hp = prev_state(b, t, j);
                            dzr[j] = dh[j] * (cr[j] - hp) * zr[j] * (1.0 - zr[j]);
                            dcr[j] = dh[j] * zr[j] * (1.0 - cr[j] * cr[j]);
                        }
                        // back through the candidate's recurrent term
                        for (std::size_t i = 0; i < H; ++i) {
                            const double* uh = &Uh.data[i * H];
                            double s = 0.0;
                            for (std::size_t j = 0; j < H; ++j) s += dcr[j] * uh[j];
                            drhm[i] = s;
                        }
                        for (std::size_t j = 0; j < H; ++j) {
                            const double hmv = hm_at(b, t, j);
                            drr[j] = drhm[j] * hmv * rr[j] * (1.0 - rr[j]);
                            dhm[j] = drhm[j] * rr[j];
                        }
                        // back through the z and r gates' recurrent terms
                        for (std::size_t i = 0; i < H; ++i) {
                            const double* uz = &Uz.data[i * H];
                            const double* ur = &Ur.data[i * H];
                            double s = 0.0;
                            for (std::size_t j = 0; j < H; ++j)
                                s += dzr[j] * uz[j] + drr[j] * ur[j];
                            dhm[i] += s;
                        }
                        for (std::size_t j = 0; j < H; ++j) {
                            double nd = dh[j] * (1.0 - zr[j]);
                            double mh = has_mh ? saved->mask_h.data[b * H + j] : 1.0;
                            dh[j] = nd + dhm[j] * mh;
                        }
                    }
                    std::copy_n(dh.data(), H, &dh0_rows.data[b * H]);
                }
            });

            if (gr.needs_grad(x)) {
                const Tensor& Wz = gr.value(p.W_z);
                const Tensor& Wr = gr.value(p.W_r);
                const Tensor& Wh = gr.value(p.W_h);
                Tensor& gx = gr.grad_buffer(x);
                parallel_for(B * T, [&](std::size_t i0, std::size_t i1) {
                    for (std::size_t bt = i0; bt < i1; ++bt) {
                        const std::size_t b = bt / T;
                        const double* dzr = &dz.data[bt * H];
                        const double* drr = &dr.data[bt * H];
                        const double* dcr = &dc.data[bt * H];
                        double* gxr = &gx.data[bt * D];
                        for (std::size_t i = 0; i < D; ++i) {
                            const double* wz = &Wz.data[i * H];
                            const double* wr = &Wr.data[i * H];
                            const double* wh = &Wh.data[i * H];
                            double s = 0.0;
                            for (std::size_t j = 0; j < H; ++j)
                                s += dzr[j] * wz[j] + drr[j] * wr[j] + dcr[j] * wh[j];
                            if (has_mx) s *= saved->mask_x.data[b * D + i];
                            gxr[i] += s;
                        }
                    }
                });
            }

            auto accum_w = [&](NodeId wid, const Tensor& delta) {
                if (!gr.needs_grad(wid)) return;
                Tensor& gw = gr.grad_buffer(wid);
                parallel_for(D, [&](std::size_t i0, std::size_t i1) {
                    for (std::size_t i = i0; i < i1; ++i) {
                        double* grow = &gw.data[i * H];
                        for (std::size_t bt = 0; bt < B * T; ++bt) {
                            const std::size_t b = bt / T;
                            double xv = X.data[bt * D + i];
                            if (has_mx) xv *= saved->mask_x.data[b * D + i];
                            if (xv == 0.0) continue;
                            const double* drow = &delta.data[bt * H];
                            for (std::size_t j = 0; j < H; ++j) grow[j] += xv * drow[j];
                        }
                    }
                });
            };
            accum_w(p.W_z, dz);
            accum_w(p.W_r, dr);
            accum_w(p.W_h, dc);

            auto accum_u = [&](NodeId uid, const Tensor& delta, bool via_reset) {
                if (!gr.needs_grad(uid)) return;
                Tensor& gu = gr.grad_buffer(uid);
                parallel_for(H, [&](std::size_t i0, std::size_t i1) {
                    for (std::size_t i = i0; i < i1; ++i) {
                        double* grow = &gu.data[i * H];
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t t = 0; t < T; ++t) {
                                double hv = hm_at(b, t, i);
                                if (via_reset) hv *= saved->r.data[(b * T + t) * H + i];
                                if (hv == 0.0) continue;
                                const double* drow = &delta.data[(b * T + t) * H];
                                for (std::size_t j = 0; j < H; ++j) grow[j] += hv * drow[j];
                            }
                    }
                });
            };
            accum_u(p.U_z, dz, false);
            accum_u(p.U_r, dr, false);
            accum_u(p.U_h, dc, true);

            auto accum_b = [&](NodeId bid, const Tensor& delta) {
                if (!gr.needs_grad(bid)) return;
                Tensor& gb = gr.grad_buffer(bid);
                for (std::size_t bt = 0; bt < B * T; ++bt) {
                    const double* drow = &delta.data[bt * H];
                    for (std::size_t j = 0; j < H; ++j) gb.data[j] += drow[j];
                }
            };
            accum_b(p.b_z, dz);
            accum_b(p.b_r, dr);
            accum_b(p.b_h, dc);

            if (gr.needs_grad(h0)) {
                Tensor& gh = gr.grad_buffer(h0);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < H; ++j) gh.data[j] += dh0_rows.data[b * H + j];
            }
        });
}

// Bidirectional encoding: final forward state and final backward state
// concatenated, zero initial states -> (batch x 2*hidden).
inline NodeId bigru_encode(Graph& g, NodeId x, const GruNodes& fw, const GruNodes& bw,
                           const GruDropoutMasks* fw_masks = nullptr,
                           const GruDropoutMasks* bw_masks = nullptr) {
    const std::size_t H = g.value(fw.b_z).numel();
    if (g.value(bw.b_z).numel() != H)
        throw ContractError("bigru_encode: forward and backward hidden sizes differ");
    const SeqView v = seq_view(g.value(x), "bigru_encode");
    NodeId h0f = g.constant(Tensor::zeros(Shape{H}), "h0");
    NodeId h0b = g.constant(Tensor::zeros(Shape{H}), "h0");
    NodeId sf = gru_sequence(g, x, fw, h0f, false, fw_masks);
    NodeId sb = gru_sequence(g, x, bw, h0b, true, bw_masks);
    NodeId last_f = select_time(g, sf, v.seq - 1);
    NodeId first_b = select_time(g, sb, 0);
    return concat_channels(g, last_f, first_b);
}

// ---------------------------------------------------------------------------
// dense + softmax head
// ---------------------------------------------------------------------------

// logits = v W + b for v (rows x d) or (d); W is (d x classes)
inline NodeId dense(Graph& g, NodeId v, NodeId w, NodeId bias) {
    const Tensor& V = g.value(v);
    const Tensor& W = g.value(w);
    const Tensor& B = g.value(bias);
    if (W.rank() != 2) throw ContractError("dense: weight must be rank 2");
    const std::size_t d = W.dim(0), k = W.dim(1);
    if (V.shape.back() != d || V.rank() > 2)
        throw ContractError("dense: input shape " + shape_str(V.shape) +
                            " incompatible with weight " + shape_str(W.shape));
    if (B.numel() != k) throw ContractError("dense: bias length mismatch");
    const std::size_t rows = V.numel() / d;
    Tensor Y(V.rank() == 1 ? Shape{k} : Shape{rows, k});
    parallel_for(rows, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            double* out = &Y.data[r * k];
            for (std::size_t c = 0; c < k; ++c) out[c] = B.data[c];
            const double* in = &V.data[r * d];
            for (std::size_t i = 0; i < d; ++i) {
                const double xv = in[i];
                const double* wrow = &W.data[i * k];
                for (std::size_t c = 0; c < k; ++c) out[c] += xv * wrow[c];
            }
        }
    });
    return g.add_node(std::move(Y), {v, w, bias}, "dense",
                      [v, w, bias, rows, d, k](Graph& gr, NodeId self) {
                          const Tensor& gy = gr.node(self).grad;
                          const Tensor& V = gr.value(v);
                          const Tensor& W = gr.value(w);
                          if (gr.needs_grad(v)) {
                              Tensor& gv = gr.grad_buffer(v);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t i = 0; i < d; ++i) {
                                      double s = 0.0;
                                      const double* gyr = &gy.data[r * k];
                                      const double* wrow = &W.data[i * k];
                                      for (std::size_t c = 0; c < k; ++c) s += gyr[c] * wrow[c];
                                      gv.data[r * d + i] += s;
                                  }
                          }
                          if (gr.needs_grad(w)) {
                              Tensor& gw = gr.grad_buffer(w);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* gyr = &gy.data[r * k];
                                  for (std::size_t i = 0; i < d; ++i) {
                                      const double xv = V.data[r * d + i];
                                      if (xv == 0.0) continue;
                                      double* gwr = &gw.data[i * k];
                                      for (std::size_t c = 0; c < k; ++c) gwr[c] += xv * gyr[c];
                                  }
                              }
                          }
                          if (gr.needs_grad(bias)) {
                              Tensor& gb = gr.grad_buffer(bias);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < k; ++c)
                                      gb.data[c] += gy.data[r * k + c];
                          }
                      });
}

inline NodeId dense_softmax(Graph& g, NodeId v, NodeId w, NodeId bias) {
    return softmax_rows(g, dense(g, v, w, bias));
}

// ---------------------------------------------------------------------------
// plain (non-graph) wrappers; same kernels on a throwaway tape
// ---------------------------------------------------------------------------

inline Tensor embed(const ByteBatch& ids, const Tensor& table) {
    Graph g;
    return g.value(embed(g, ids, g.constant(table)));
}

inline Tensor embed(const std::vector<std::int32_t>& ids, const Tensor& table) {
    ByteBatch b{1, ids.size(), ids};
    Tensor y = embed(b, table);
    y.shape = Shape{ids.size(), table.dim(1)};
    return y;
}

inline Tensor conv1d_same(const Tensor& X, const ConvParams& p) {
    Graph g;
    return g.value(conv1d_same(g, g.constant(X), g.constant(p.W), g.constant(p.b)));
}

inline Tensor batch_norm(const Tensor& X, BNParams& p, LayerMode mode) {
    Graph g;
    BNRunningStats upd{&p.running_mean, &p.running_var};
    return g.value(batch_norm(g, g.constant(X), g.constant(p.gamma), g.constant(p.beta), p, mode,
                              mode == LayerMode::Train ? upd : BNRunningStats{}));
}

inline Tensor dropout(const Tensor& X, double p, LayerMode mode, Rng& rng) {
    Graph g;
    return g.value(dropout(g, g.constant(X), p, mode, rng));
}

inline Tensor max_pool1d(const Tensor& X, std::size_t k) {
    Graph g;
    return g.value(max_pool1d(g, g.constant(X), k));
}

struct GruResult {
    Tensor states;  // (seq x hidden) or (batch x seq x hidden)
    Tensor final;   // (hidden) or (batch x hidden)
};

inline GruResult gru_sequence(const Tensor& X, const GRUParams& p, const Tensor& h0,
                              bool reversed) {
    Graph g;
    GruNodes n{g.constant(p.W_z), g.constant(p.W_r), g.constant(p.W_h),
               g.constant(p.U_z), g.constant(p.U_r), g.constant(p.U_h),
               g.constant(p.b_z), g.constant(p.b_r), g.constant(p.b_h)};
    NodeId states = gru_sequence(g, g.constant(X), n, g.constant(h0), reversed);
    const SeqView v = seq_view(X, "gru_sequence");
    NodeId fin = select_time(g, states, reversed ? 0 : v.seq - 1);
    return GruResult{g.value(states), g.value(fin)};
}

inline Tensor bigru_encode(const Tensor& X, const GRUParams& fw, const GRUParams& bw) {
    Graph g;
    GruNodes nf{g.constant(fw.W_z), g.constant(fw.W_r), g.constant(fw.W_h),
                g.constant(fw.U_z), g.constant(fw.U_r), g.constant(fw.U_h),
                g.constant(fw.b_z), g.constant(fw.b_r), g.constant(fw.b_h)};
    GruNodes nb{g.constant(bw.W_z), g.constant(bw.W_r), g.constant(bw.W_h),
                g.constant(bw.U_z), g.constant(bw.U_r), g.constant(bw.U_h),
                g.constant(bw.b_z), g.constant(bw.b_r), g.constant(bw.b_h)};
    return g.value(bigru_encode(g, g.constant(X), nf, nb));
}

inline Tensor dense_softmax(const Tensor& v, const Tensor& W, const Tensor& b) {
    Graph g;
    return g.value(dense_softmax(g, g.constant(v), g.constant(W), g.constant(b)));
}

inline double cross_entropy(const Tensor& probs, std::int32_t gold) {
    Graph g;
    return g.value(cross_entropy(g, g.constant(probs), gold)).item();
}

}  // namespace resident
