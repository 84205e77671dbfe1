#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "resident/layers.hpp"

using namespace resident;
using Catch::Approx;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// independent nested-loop convolution, zero padding split floor/ceil
Tensor conv_oracle(const Tensor& X, const Tensor& W, const Tensor& b) {
    const std::size_t T = X.dim(0), cin = X.dim(1);
    const std::size_t k = W.dim(0), cout = W.dim(2);
    const long pad_left = static_cast<long>((k - 1) / 2);
    Tensor Y(Shape{T, cout});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t o = 0; o < cout; ++o) {
            double acc = b.data[o];
            for (std::size_t dt = 0; dt < k; ++dt)
                for (std::size_t i = 0; i < cin; ++i) {
                    const long tt = static_cast<long>(t) + static_cast<long>(dt) - pad_left;
                    if (tt < 0 || tt >= static_cast<long>(T)) continue;
                    acc += W.at(dt, i, o) * X.at(static_cast<std::size_t>(tt), i);
                }
            Y.at(t, o) = acc;
        }
    return Y;
}

// direct-summation batch norm (train mode, population variance)
Tensor bn_oracle(const Tensor& X, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t B = X.dim(0), T = X.dim(1), C = X.dim(2);
    Tensor Y(X.shape);
    for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t) sum += X.at(b, t, c);
        const double mean = sum / static_cast<double>(B * T);
        double sq = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t) {
                const double d = X.at(b, t, c) - mean;
                sq += d * d;
            }
        const double var = sq / static_cast<double>(B * T);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                Y.at(b, t, c) =
                    gamma.data[c] * (X.at(b, t, c) - mean) / std::sqrt(var + eps) + beta.data[c];
    }
    return Y;
}

// step-by-step gate evaluation with naive dot products
Tensor gru_oracle(const Tensor& X, const GRUParams& p, const Tensor& h0, bool reversed) {
    const std::size_t T = X.dim(0), D = X.dim(1), H = p.hidden();
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h(h0.data.begin(), h0.data.end());
    Tensor states(Shape{T, H});
    for (std::size_t n = 0; n < T; ++n) {
        const std::size_t t = reversed ? T - 1 - n : n;
        std::vector<double> z(H), r(H), c(H);
        for (std::size_t j = 0; j < H; ++j) {
            double az = p.b_z.data[j], ar = p.b_r.data[j];
            for (std::size_t i = 0; i < D; ++i) {
                az += p.W_z.at(i, j) * X.at(t, i);
                ar += p.W_r.at(i, j) * X.at(t, i);
            }
            for (std::size_t i = 0; i < H; ++i) {
                az += p.U_z.at(i, j) * h[i];
                ar += p.U_r.at(i, j) * h[i];
            }
            z[j] = sig(az);
            r[j] = sig(ar);
        }
        for (std::size_t j = 0; j < H; ++j) {
            double ac = p.b_h.data[j];
            for (std::size_t i = 0; i < D; ++i) ac += p.W_h.at(i, j) * X.at(t, i);
            for (std::size_t i = 0; i < H; ++i) ac += p.U_h.at(i, j) * (r[i] * h[i]);
            c[j] = std::tanh(ac);
        }
        for (std::size_t j = 0; j < H; ++j) {
            h[j] = (1.0 - z[j]) * h[j] + z[j] * c[j];
            states.at(t, j) = h[j];
        }
    }
    return states;
}

// naive softmax in extended precision
std::vector<double> softmax_oracle(const std::vector<double>& logits) {
    long double denom = 0.0L;
    for (double v : logits) denom += expl(static_cast<long double>(v));
    std::vector<double> out;
    for (double v : logits)
        out.push_back(static_cast<double>(expl(static_cast<long double>(v)) / denom));
    return out;
}

GRUParams rand_gru(std::size_t d, std::size_t h, Rng& rng) {
    GRUParams p;
    p.W_z = rand_tensor({d, h}, rng);
    p.W_r = rand_tensor({d, h}, rng);
    p.W_h = rand_tensor({d, h}, rng);
    p.U_z = rand_tensor({h, h}, rng);
    p.U_r = rand_tensor({h, h}, rng);
    p.U_h = rand_tensor({h, h}, rng);
    p.b_z = rand_tensor({h}, rng, -0.3, 0.3);
    p.b_r = rand_tensor({h}, rng, -0.3, 0.3);
    p.b_h = rand_tensor({h}, rng, -0.3, 0.3);
    return p;
}

GRUParams zero_gru(std::size_t d, std::size_t h) {
    GRUParams p;
    p.W_z = Tensor::zeros({d, h});
    p.W_r = Tensor::zeros({d, h});
    p.W_h = Tensor::zeros({d, h});
    p.U_z = Tensor::zeros({h, h});
    p.U_r = Tensor::zeros({h, h});
    p.U_h = Tensor::zeros({h, h});
    p.b_z = Tensor::zeros({h});
    p.b_r = Tensor::zeros({h});
    p.b_h = Tensor::zeros({h});
    return p;
}

}  // namespace

TEST_CASE("embed looks up rows and pins PAD to zero") {
    Rng rng(1);
    Tensor table = rand_tensor({kByteVocab, 4}, rng);

    // the multibyte pair: 'a-umlaut' is bytes C3 A4
    Tensor y = embed(std::vector<std::int32_t>{0xC3, 0xA4}, table);
    for (std::size_t c = 0; c < 4; ++c) {
        REQUIRE(y.at(0, c) == table.at(0xC3, c));
        REQUIRE(y.at(1, c) == table.at(0xA4, c));
    }

    Tensor pads = embed(std::vector<std::int32_t>{kPadId, kPadId}, table);
    REQUIRE(pads.shape == Shape{2, 4});
    for (double v : pads.data) REQUIRE(v == 0.0);

    Tensor single = embed(std::vector<std::int32_t>{7}, table);
    for (std::size_t c = 0; c < 4; ++c) REQUIRE(single.at(0, c) == table.at(7, c));

    Graph g;
    NodeId tab = g.constant(table);
    ByteBatch bad{1, 1, {257}};
    REQUIRE_THROWS_AS(embed(g, bad, tab), ContractError);
    ByteBatch neg{1, 1, {-1}};
    REQUIRE_THROWS_AS(embed(g, neg, tab), ContractError);
}

TEST_CASE("conv1d_same basic identities") {
    Rng rng(2);
    Tensor X = rand_tensor({6, 3}, rng);

    ConvParams zero{Tensor::zeros({8, 3, 2}), Tensor::full({2}, 0.5)};
    Tensor y = conv1d_same(X, zero);
    REQUIRE(y.shape == Shape{6, 2});
    for (double v : y.data) REQUIRE(v == 0.5);

    // k=1 identity kernel
    ConvParams ident{Tensor::zeros({1, 3, 3}), Tensor::zeros({3})};
    for (std::size_t i = 0; i < 3; ++i) ident.W.at(0, i, i) = 1.0;
    Tensor same = conv1d_same(X, ident);
    for (std::size_t i = 0; i < X.numel(); ++i) REQUIRE(same.data[i] == X.data[i]);

    ConvParams mismatch{Tensor::zeros({3, 4, 2}), Tensor::zeros({2})};
    REQUIRE_THROWS_AS(conv1d_same(X, mismatch), ContractError);
}

TEST_CASE("conv1d_same matches the nested-loop oracle") {
    Rng rng(3);
    Tensor X = rand_tensor({10, 3}, rng);
    ConvParams p{rand_tensor({8, 3, 2}, rng), rand_tensor({2}, rng)};
    Tensor got = conv1d_same(X, p);
    Tensor want = conv_oracle(X, p.W, p.b);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.numel(); ++i)
        REQUIRE(got.data[i] == Approx(want.data[i]).margin(1e-12));
}

TEST_CASE("conv1d_same output length equals input length for every window") {
    Rng rng(4);
    for (std::size_t k = 1; k <= 9; ++k) {
        Tensor X = rand_tensor({7, 2}, rng);
        ConvParams p{rand_tensor({k, 2, 3}, rng), rand_tensor({3}, rng)};
        REQUIRE(conv1d_same(X, p).shape == Shape{7, 3});
    }
}

TEST_CASE("batch_norm handles constant input and zero gamma") {
    BNParams p;
    p.gamma = Tensor::full({3}, 1.0);
    p.beta = Tensor::zeros({3});
    p.running_mean = Tensor::zeros({3});
    p.running_var = Tensor::full({3}, 1.0);

    const double c = 4.2;
    Tensor X = Tensor::full({2, 5, 3}, c);
    Tensor y = batch_norm(X, p, LayerMode::Train);
    for (double v : y.data) REQUIRE(std::abs(v) <= c * 1e-3);

    BNParams q = p;
    q.gamma = Tensor::zeros({3});
    q.beta = Tensor::full({3}, 2.0);
    Rng rng(5);
    Tensor R = rand_tensor({2, 5, 3}, rng);
    Tensor y2 = batch_norm(R, q, LayerMode::Train);
    for (double v : y2.data) REQUIRE(v == 2.0);
}

TEST_CASE("batch_norm matches the direct-summation oracle") {
    Rng rng(6);
    Tensor X = rand_tensor({4, 6, 3}, rng);
    BNParams p;
    p.gamma = rand_tensor({3}, rng, 0.5, 1.5);
    p.beta = rand_tensor({3}, rng);
    p.running_mean = Tensor::zeros({3});
    p.running_var = Tensor::full({3}, 1.0);
    Tensor got = batch_norm(X, p, LayerMode::Train);
    Tensor want = bn_oracle(X, p.gamma, p.beta, p.eps);
    for (std::size_t i = 0; i < got.numel(); ++i)
        REQUIRE(got.data[i] == Approx(want.data[i]).margin(1e-12));
}

TEST_CASE("batch_norm train output is standardized when gamma=1 beta=0") {
    Rng rng(7);
    Tensor X = rand_tensor({3, 8, 2}, rng, -2.0, 3.0);
    BNParams p;
    p.gamma = Tensor::full({2}, 1.0);
    p.beta = Tensor::zeros({2});
    p.running_mean = Tensor::zeros({2});
    p.running_var = Tensor::full({2}, 1.0);
    Tensor y = batch_norm(X, p, LayerMode::Train);
    const std::size_t N = 24;
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t t = 0; t < 8; ++t) mean += y.at(b, t, c);
        mean /= N;
        REQUIRE(std::abs(mean) <= 1e-9);
        // channel variance of x, for the expected shrink factor
        double xm = 0.0, xv = 0.0, var = 0.0;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t t = 0; t < 8; ++t) xm += X.at(b, t, c);
        xm /= N;
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t t = 0; t < 8; ++t) {
                xv += (X.at(b, t, c) - xm) * (X.at(b, t, c) - xm);
                var += (y.at(b, t, c) - mean) * (y.at(b, t, c) - mean);
            }
        xv /= N;
        var /= N;
        REQUIRE(var == Approx(1.0 / (1.0 + p.eps / xv)).margin(1e-6));
    }
}

TEST_CASE("batch_norm train mode needs at least two samples per channel") {
    BNParams p;
    p.gamma = Tensor::full({3}, 1.0);
    p.beta = Tensor::zeros({3});
    p.running_mean = Tensor::zeros({3});
    p.running_var = Tensor::full({3}, 1.0);
    Tensor X = Tensor::full({1, 3}, 1.0);  // a single position
    REQUIRE_THROWS_AS(batch_norm(X, p, LayerMode::Train), ContractError);
    REQUIRE_NOTHROW(batch_norm(X, p, LayerMode::Infer));
}

TEST_CASE("gru rejects inconsistent shapes") {
    Rng rng(19);
    GRUParams p = rand_gru(3, 4, rng);
    Tensor X = rand_tensor({5, 2}, rng);  // input dim 2, weights expect 3
    REQUIRE_THROWS_AS(gru_sequence(X, p, Tensor::zeros({4}), false), ContractError);
    Tensor X3 = rand_tensor({5, 3}, rng);
    REQUIRE_THROWS_AS(gru_sequence(X3, p, Tensor::zeros({2}), false), ContractError);
}

TEST_CASE("batch_norm updates running statistics by moving average") {
    Rng rng(8);
    Tensor X = rand_tensor({2, 4, 2}, rng);
    BNParams p;
    p.gamma = Tensor::full({2}, 1.0);
    p.beta = Tensor::zeros({2});
    p.running_mean = Tensor::full({2}, 0.5);
    p.running_var = Tensor::full({2}, 2.0);
    batch_norm(X, p, LayerMode::Train);
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 0; t < 4; ++t) mean += X.at(b, t, c);
        mean /= 8.0;
        double var = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 0; t < 4; ++t)
                var += (X.at(b, t, c) - mean) * (X.at(b, t, c) - mean);
        var /= 8.0;
        REQUIRE(p.running_mean.data[c] == Approx(0.9 * 0.5 + 0.1 * mean).margin(1e-12));
        REQUIRE(p.running_var.data[c] == Approx(0.9 * 2.0 + 0.1 * var).margin(1e-12));
    }
    // infer mode must not touch them
    Tensor rm = p.running_mean, rv = p.running_var;
    batch_norm(X, p, LayerMode::Infer);
    REQUIRE(p.running_mean.data == rm.data);
    REQUIRE(p.running_var.data == rv.data);
}

TEST_CASE("dropout identities and survivor scaling") {
    Rng rng(9);
    Tensor X = rand_tensor({4, 5}, rng);

    Rng r1(1);
    Tensor y = dropout(X, 0.0, LayerMode::Train, r1);
    REQUIRE(y.data == X.data);

    Tensor y2 = dropout(X, 0.7, LayerMode::Infer, r1);
    REQUIRE(y2.data == X.data);

    REQUIRE_THROWS_AS(dropout(X, 1.0, LayerMode::Train, r1), ContractError);
    REQUIRE_THROWS_AS(dropout(X, -0.1, LayerMode::Train, r1), ContractError);

    Tensor ones = Tensor::full({100000}, 1.0);
    Rng r2(123);
    Tensor dropped = dropout(ones, 0.5, LayerMode::Train, r2);
    double mean = 0.0;
    for (double v : dropped.data) mean += v;
    mean /= static_cast<double>(dropped.numel());
    REQUIRE(mean >= 0.98);
    REQUIRE(mean <= 1.02);
}

TEST_CASE("max_pool1d windows, floor semantics and errors") {
    Tensor X(Shape{4, 1}, {1.0, 3.0, 2.0, 5.0});
    Tensor y = max_pool1d(X, 2);
    REQUIRE(y.shape == Shape{2, 1});
    REQUIRE(y.data == std::vector<double>{3.0, 5.0});

    Tensor c = Tensor::full({6, 3}, 1.25);
    Tensor yc = max_pool1d(c, 2);
    REQUIRE(yc.shape == Shape{3, 3});
    for (double v : yc.data) REQUIRE(v == 1.25);

    Rng rng(10);
    Tensor odd = rand_tensor({7, 2}, rng);
    REQUIRE(max_pool1d(odd, 2).shape == Shape{3, 2});

    Tensor tiny = rand_tensor({1, 2}, rng);
    REQUIRE_THROWS_AS(max_pool1d(tiny, 2), ContractError);
}

TEST_CASE("gru with zero weights halves the state each step") {
    const std::size_t D = 3, H = 4, T = 5;
    GRUParams p = zero_gru(D, H);
    Tensor h0(Shape{H}, {1.0, -2.0, 0.5, 4.0});
    Rng rng(11);
    Tensor X = rand_tensor({T, D}, rng);
    GruResult res = gru_sequence(X, p, h0, false);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j)
            REQUIRE(res.states.at(t, j) ==
                    Approx(h0.data[j] * std::pow(0.5, static_cast<double>(t + 1))).margin(1e-12));
    for (std::size_t j = 0; j < H; ++j)
        REQUIRE(res.final.data[j] == res.states.at(T - 1, j));
}

TEST_CASE("gru single step matches a hand-evaluated gate computation") {
    Rng rng(12);
    const std::size_t D = 2, H = 2;
    GRUParams p = rand_gru(D, H, rng);
    Tensor h0 = rand_tensor({H}, rng);
    Tensor X = rand_tensor({1, D}, rng);
    GruResult res = gru_sequence(X, p, h0, false);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (std::size_t j = 0; j < H; ++j) {
        double az = p.b_z.data[j], ar = p.b_r.data[j];
        for (std::size_t i = 0; i < D; ++i) {
            az += p.W_z.at(i, j) * X.at(0, i);
            ar += p.W_r.at(i, j) * X.at(0, i);
        }
        for (std::size_t i = 0; i < H; ++i) {
            az += p.U_z.at(i, j) * h0.data[i];
            ar += p.U_r.at(i, j) * h0.data[i];
        }
        const double z = sig(az);
        // reset gate for every unit is needed before the candidate
        std::vector<double> r(H);
        for (std::size_t jj = 0; jj < H; ++jj) {
            double a = p.b_r.data[jj];
            for (std::size_t i = 0; i < D; ++i) a += p.W_r.at(i, jj) * X.at(0, i);
            for (std::size_t i = 0; i < H; ++i) a += p.U_r.at(i, jj) * h0.data[i];
            r[jj] = sig(a);
        }
        double ac = p.b_h.data[j];
        for (std::size_t i = 0; i < D; ++i) ac += p.W_h.at(i, j) * X.at(0, i);
        for (std::size_t i = 0; i < H; ++i) ac += p.U_h.at(i, j) * (r[i] * h0.data[i]);
        const double want = (1.0 - z) * h0.data[j] + z * std::tanh(ac);
        REQUIRE(res.states.at(0, j) == Approx(want).margin(1e-12));
        (void)ar;
    }
}

TEST_CASE("reversed gru equals forward gru on the flipped sequence") {
    Rng rng(13);
    const std::size_t D = 3, H = 2, T = 2;
    GRUParams p = rand_gru(D, H, rng);
    Tensor h0 = Tensor::zeros({H});
    Tensor X = rand_tensor({T, D}, rng);
    Tensor flipped(X.shape);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < D; ++i) flipped.at(t, i) = X.at(T - 1 - t, i);
    GruResult rev = gru_sequence(X, p, h0, true);
    GruResult fwd = gru_sequence(flipped, p, h0, false);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j)
            REQUIRE(rev.states.at(t, j) == Approx(fwd.states.at(T - 1 - t, j)).margin(1e-12));
}

TEST_CASE("gru matches the step-by-step oracle on random shapes") {
    Rng rng(14);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t T = 1 + rng.below(7), D = 1 + rng.below(5), H = 1 + rng.below(5);
        const bool reversed = rng.bernoulli(0.5);
        GRUParams p = rand_gru(D, H, rng);
        Tensor h0 = rand_tensor({H}, rng);
        Tensor X = rand_tensor({T, D}, rng);
        GruResult got = gru_sequence(X, p, h0, reversed);
        Tensor want = gru_oracle(X, p, h0, reversed);
        for (std::size_t i = 0; i < want.numel(); ++i)
            REQUIRE(got.states.data[i] == Approx(want.data[i]).margin(1e-12));
    }
}

TEST_CASE("gru states stay in [-1, 1] from a zero initial state") {
    Rng rng(15);
    GRUParams p = rand_gru(4, 3, rng);
    for (Tensor* w : {&p.W_z, &p.W_r, &p.W_h, &p.U_z, &p.U_r, &p.U_h})
        for (double& v : w->data) v *= 3.0;  // exaggerate
    Tensor X = rand_tensor({12, 4}, rng, -2.0, 2.0);
    GruResult res = gru_sequence(X, p, Tensor::zeros({3}), false);
    for (double v : res.states.data) REQUIRE(std::abs(v) <= 1.0);
}

TEST_CASE("bigru output width, zero case and palindrome symmetry") {
    Rng rng(16);
    {
        GRUParams fw = rand_gru(3, 100, rng), bw = rand_gru(3, 100, rng);
        Tensor X = rand_tensor({4, 3}, rng);
        REQUIRE(bigru_encode(X, fw, bw).shape == Shape{200});
    }
    {
        GRUParams fw = zero_gru(3, 5), bw = zero_gru(3, 5);
        Tensor X = rand_tensor({4, 3}, rng);
        Tensor y = bigru_encode(X, fw, bw);
        for (double v : y.data) REQUIRE(v == 0.0);
    }
    {
        GRUParams p = rand_gru(2, 3, rng);
        Tensor X(Shape{5, 2});
        for (std::size_t t = 0; t < 5; ++t)
            for (std::size_t i = 0; i < 2; ++i) {
                const double v = rng.uniform(-1.0, 1.0);
                X.at(t, i) = t < 3 ? v : X.at(4 - t, i);
            }
        Tensor y = bigru_encode(X, p, p);
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE(y.data[j] == Approx(y.data[3 + j]).margin(1e-12));
    }
    {
        GRUParams fw = rand_gru(3, 4, rng), bw = rand_gru(3, 5, rng);
        Graph g;
        GruNodes nf{g.constant(fw.W_z), g.constant(fw.W_r), g.constant(fw.W_h),
                    g.constant(fw.U_z), g.constant(fw.U_r), g.constant(fw.U_h),
                    g.constant(fw.b_z), g.constant(fw.b_r), g.constant(fw.b_h)};
        GruNodes nb{g.constant(bw.W_z), g.constant(bw.W_r), g.constant(bw.W_h),
                    g.constant(bw.U_z), g.constant(bw.U_r), g.constant(bw.U_h),
                    g.constant(bw.b_z), g.constant(bw.b_r), g.constant(bw.b_h)};
        NodeId x = g.constant(rand_tensor({4, 3}, rng));
        REQUIRE_THROWS_AS(bigru_encode(g, x, nf, nb), ContractError);
    }
}

TEST_CASE("dense_softmax uniform, stability and oracle cases") {
    {
        Tensor v = Tensor::zeros({3});
        Tensor W = Tensor::zeros({3, 12});
        Tensor b = Tensor::zeros({12});
        Tensor p = dense_softmax(v, W, b);
        for (double x : p.data) REQUIRE(x == Approx(1.0 / 12.0).margin(1e-12));
    }
    {
        Tensor v(Shape{1}, {1.0});
        Tensor W(Shape{1, 2}, {1000.0, 0.0});
        Tensor b = Tensor::zeros({2});
        Tensor p = dense_softmax(v, W, b);
        REQUIRE(std::isfinite(p.data[0]));
        REQUIRE(p.data[0] == Approx(1.0).margin(1e-9));
        REQUIRE(p.data[1] == Approx(0.0).margin(1e-9));
    }
    {
        Rng rng(17);
        Tensor v = rand_tensor({4}, rng);
        Tensor W = rand_tensor({4, 6}, rng);
        Tensor b = rand_tensor({6}, rng);
        Tensor p = dense_softmax(v, W, b);
        std::vector<double> logits(6);
        for (std::size_t c = 0; c < 6; ++c) {
            logits[c] = b.data[c];
            for (std::size_t i = 0; i < 4; ++i) logits[c] += W.at(i, c) * v.data[i];
        }
        const std::vector<double> want = softmax_oracle(logits);
        for (std::size_t c = 0; c < 6; ++c)
            REQUIRE(p.data[c] == Approx(want[c]).margin(1e-12));
    }
}

TEST_CASE("softmax rows sum to one and ignore constant logit shifts") {
    Rng rng(18);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor v = rand_tensor({5}, rng, -3.0, 3.0);
        Graph g;
        Tensor p1 = g.value(softmax_rows(g, g.constant(v)));
        double sum = 0.0;
        for (double x : p1.data) sum += x;
        REQUIRE(sum == Approx(1.0).margin(1e-9));
        Tensor shifted = v;
        const double c = rng.uniform(-50.0, 50.0);
        for (double& x : shifted.data) x += c;
        Tensor p2 = g.value(softmax_rows(g, g.constant(shifted)));
        for (std::size_t i = 0; i < 5; ++i)
            REQUIRE(p1.data[i] == Approx(p2.data[i]).margin(1e-9));
    }
}

TEST_CASE("cross entropy on analytic cases") {
    Tensor uniform = Tensor::full({12}, 1.0 / 12.0);
    REQUIRE(cross_entropy(uniform, 3) == Approx(std::log(12.0)).margin(1e-12));

    Tensor onehot = Tensor::zeros({4});
    onehot.data[2] = 1.0;
    REQUIRE(cross_entropy(onehot, 2) == 0.0);

    Tensor quarter = Tensor::full({4}, 0.25);
    REQUIRE(cross_entropy(quarter, 1) == Approx(std::log(4.0)).margin(1e-12));

    REQUIRE_THROWS_AS(cross_entropy(quarter, 4), ContractError);
    REQUIRE_THROWS_AS(cross_entropy(quarter, -1), ContractError);
}
