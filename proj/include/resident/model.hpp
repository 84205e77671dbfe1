#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "resident/data.hpp"
#include "resident/layers.hpp"

namespace resident {

enum class MergeMode { Concat, Add };

inline std::string merge_mode_name(MergeMode m) {
    return m == MergeMode::Concat ? "concat" : "add";
}

inline MergeMode merge_mode_from(const std::string& s) {
    if (s == "concat") return MergeMode::Concat;
    if (s == "add") return MergeMode::Add;
    throw ConfigError("unknown merge mode '" + s + "'");
}

struct ModelConfig {
    int n_blocks = 3;
    int d_b = 64;           // byte embedding dimension
    int conv_filters = 64;  // output channels of both convolutions in a block
    int window1 = 8;
    int window2 = 4;
    int pool = 2;
    MergeMode merge = MergeMode::Concat;
    double block_dropout = 0.5;
    int gru_hidden = 100;
    double gru_dropout = 0.1;
    int n_classes = 0;
    int max_len = 384;

    void validate() const {
        if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
        if (d_b < 1 || conv_filters < 1 || gru_hidden < 1)
            throw ConfigError("dimensions must be positive");
        if (window1 < 1 || window2 < 1) throw ConfigError("windows must be >= 1");
        if (pool < 1) throw ConfigError("pool size must be >= 1");
        if (!(block_dropout >= 0.0 && block_dropout < 1.0) ||
            !(gru_dropout >= 0.0 && gru_dropout < 1.0))
            throw ConfigError("dropout rates must be in [0, 1)");
        if (n_classes < 2) throw ConfigError("need at least 2 classes");
        if (max_len < 1) throw ConfigError("max_len must be positive");
        std::size_t len = static_cast<std::size_t>(max_len);
        for (int i = 0; i < n_blocks; ++i) len /= static_cast<std::size_t>(pool);
        if (len < 1)
            throw ConfigError("max_len " + std::to_string(max_len) + " collapses to nothing after " +
                              std::to_string(n_blocks) + " blocks");
        if (merge == MergeMode::Add) {
            // Add requires the residual branch to match the block input
            for (int i = 0; i < n_blocks; ++i)
                if (block_in_channels(i) != conv_filters)
                    throw ConfigError("merge mode 'add' needs conv_filters == block input "
                                      "channels; block " +
                                      std::to_string(i) + " has " +
                                      std::to_string(block_in_channels(i)));
        }
    }

    int block_in_channels(int i) const {
        if (merge == MergeMode::Add) return d_b;  // channels never grow
        return d_b + i * conv_filters;
    }

    int block_out_channels(int i) const {
        return merge == MergeMode::Add ? block_in_channels(i)
                                       : block_in_channels(i) + conv_filters;
    }

    int gru_input_dim() const { return block_out_channels(n_blocks - 1); }

    int final_seq_len() const {
        std::size_t len = static_cast<std::size_t>(max_len);
        for (int i = 0; i < n_blocks; ++i) len /= static_cast<std::size_t>(pool);
        return static_cast<int>(len);
    }
};

struct ResidualBlockParams {
    BNParams bn1, bn2;
    ConvParams conv1, conv2;  // windows window1 and window2
};

struct Model {
    ModelConfig config;
    LabelVocab labels;
    Tensor embedding;  // (257 x d_b), PAD row pinned to zero
    std::vector<ResidualBlockParams> blocks;
    GRUParams gru_fw, gru_bw;
    Tensor head_W;  // (2*gru_hidden x n_classes)
    Tensor head_b;  // (n_classes)
};

// named reference to one tensor of a model, in canonical manifest order
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

namespace detail {

inline void gru_param_refs(const std::string& prefix, GRUParams& p, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".W_z", &p.W_z});
    out.push_back({prefix + ".W_r", &p.W_r});
    out.push_back({prefix + ".W_h", &p.W_h});
    out.push_back({prefix + ".U_z", &p.U_z});
    out.push_back({prefix + ".U_r", &p.U_r});
    out.push_back({prefix + ".U_h", &p.U_h});
    out.push_back({prefix + ".b_z", &p.b_z});
    out.push_back({prefix + ".b_r", &p.b_r});
    out.push_back({prefix + ".b_h", &p.b_h});
}

}  // namespace detail

// trainable tensors, canonical order (also the serialization order)
inline std::vector<ParamRef> trainable_params(Model& m) {
    std::vector<ParamRef> out;
    out.push_back({"embedding", &m.embedding});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        ResidualBlockParams& b = m.blocks[i];
        out.push_back({p + ".bn1.gamma", &b.bn1.gamma});
        out.push_back({p + ".bn1.beta", &b.bn1.beta});
        out.push_back({p + ".conv1.W", &b.conv1.W});
        out.push_back({p + ".conv1.b", &b.conv1.b});
        out.push_back({p + ".bn2.gamma", &b.bn2.gamma});
        out.push_back({p + ".bn2.beta", &b.bn2.beta});
        out.push_back({p + ".conv2.W", &b.conv2.W});
        out.push_back({p + ".conv2.b", &b.conv2.b});
    }
    detail::gru_param_refs("gru_fw", m.gru_fw, out);
    detail::gru_param_refs("gru_bw", m.gru_bw, out);
    out.push_back({"head.W", &m.head_W});
    out.push_back({"head.b", &m.head_b});
    return out;
}

// non-trainable state (batch-norm running statistics)
inline std::vector<ParamRef> buffer_params(Model& m) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        ResidualBlockParams& b = m.blocks[i];
        out.push_back({p + ".bn1.running_mean", &b.bn1.running_mean});
        out.push_back({p + ".bn1.running_var", &b.bn1.running_var});
        out.push_back({p + ".bn2.running_mean", &b.bn2.running_mean});
        out.push_back({p + ".bn2.running_var", &b.bn2.running_var});
    }
    return out;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

inline BNParams make_bn(std::size_t channels) {
    BNParams p;
    p.gamma = Tensor::full(Shape{channels}, 1.0);
    p.beta = Tensor::zeros(Shape{channels});
    p.running_mean = Tensor::zeros(Shape{channels});
    p.running_var = Tensor::full(Shape{channels}, 1.0);
    return p;
}

inline ConvParams make_conv(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
    ConvParams p;
    p.W = glorot_uniform(Shape{k, cin, cout}, k * cin, k * cout, rng);
    p.b = Tensor::zeros(Shape{cout});
    return p;
}

inline GRUParams make_gru(std::size_t d, std::size_t h, Rng& rng) {
    GRUParams p;
    p.W_z = glorot_uniform(Shape{d, h}, d, h, rng);
    p.W_r = glorot_uniform(Shape{d, h}, d, h, rng);
    p.W_h = glorot_uniform(Shape{d, h}, d, h, rng);
    p.U_z = glorot_uniform(Shape{h, h}, h, h, rng);
    p.U_r = glorot_uniform(Shape{h, h}, h, h, rng);
    p.U_h = glorot_uniform(Shape{h, h}, h, h, rng);
    p.b_z = Tensor::zeros(Shape{h});
    p.b_r = Tensor::zeros(Shape{h});
    p.b_h = Tensor::zeros(Shape{h});
    return p;
}

}  // namespace detail

// Deterministic initialization: weight matrices Glorot-uniform, biases zero,
// batch-norm gamma 1 / beta 0, embedding rows uniform(-0.05, 0.05) with the
// PAD row pinned to zero. The draw order is the canonical parameter order,
// so a seed fully determines every weight.
inline Model build_model(ModelConfig config, const LabelVocab& labels, std::uint64_t seed) {
    if (config.n_classes == 0) config.n_classes = static_cast<int>(labels.size());
    if (config.n_classes != static_cast<int>(labels.size()))
        throw ConfigError("config says " + std::to_string(config.n_classes) + " classes but " +
                          std::to_string(labels.size()) + " labels were supplied");
    config.validate();

    Rng rng(seed);
    Model m;
    m.config = config;
    m.labels = labels;

    const std::size_t d = static_cast<std::size_t>(config.d_b);
    m.embedding = Tensor(Shape{kByteVocab, d});
    for (std::size_t row = 0; row < 256; ++row)
        for (std::size_t c = 0; c < d; ++c) m.embedding.at(row, c) = rng.uniform(-0.05, 0.05);
    // row 256 (PAD) stays zero

    for (int i = 0; i < config.n_blocks; ++i) {
        const std::size_t cin = static_cast<std::size_t>(config.block_in_channels(i));
        const std::size_t f = static_cast<std::size_t>(config.conv_filters);
        ResidualBlockParams b;
        b.bn1 = detail::make_bn(cin);
        b.conv1 = detail::make_conv(static_cast<std::size_t>(config.window1), cin, f, rng);
        b.bn2 = detail::make_bn(f);
        b.conv2 = detail::make_conv(static_cast<std::size_t>(config.window2), f, f, rng);
        m.blocks.push_back(std::move(b));
    }

    const std::size_t gin = static_cast<std::size_t>(config.gru_input_dim());
    const std::size_t h = static_cast<std::size_t>(config.gru_hidden);
    m.gru_fw = detail::make_gru(gin, h, rng);
    m.gru_bw = detail::make_gru(gin, h, rng);

    const std::size_t k = static_cast<std::size_t>(config.n_classes);
    m.head_W = detail::glorot_uniform(Shape{2 * h, k}, 2 * h, k, rng);
    m.head_b = Tensor::zeros(Shape{k});
    return m;
}

// ---------------------------------------------------------------------------
// graph binding
// ---------------------------------------------------------------------------

struct BlockNodes {
    NodeId bn1_gamma, bn1_beta, conv1_W, conv1_b;
    NodeId bn2_gamma, bn2_beta, conv2_W, conv2_b;
};

// node ids of all model parameters on one tape
struct ModelNodes {
    NodeId embedding;
    std::vector<BlockNodes> blocks;
    GruNodes gru_fw, gru_bw;
    NodeId head_W, head_b;
};

// Adds every trainable tensor as a named parameter node. Gradients come back
// from Graph::backward keyed by the same names.
inline ModelNodes bind_model(Graph& g, const Model& m) {
    ModelNodes n;
    n.embedding = g.parameter("embedding", m.embedding);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        const ResidualBlockParams& b = m.blocks[i];
        BlockNodes bn;
        bn.bn1_gamma = g.parameter(p + ".bn1.gamma", b.bn1.gamma);
        bn.bn1_beta = g.parameter(p + ".bn1.beta", b.bn1.beta);
        bn.conv1_W = g.parameter(p + ".conv1.W", b.conv1.W);
        bn.conv1_b = g.parameter(p + ".conv1.b", b.conv1.b);
        bn.bn2_gamma = g.parameter(p + ".bn2.gamma", b.bn2.gamma);
        bn.bn2_beta = g.parameter(p + ".bn2.beta", b.bn2.beta);
        bn.conv2_W = g.parameter(p + ".conv2.W", b.conv2.W);
        bn.conv2_b = g.parameter(p + ".conv2.b", b.conv2.b);
        n.blocks.push_back(bn);
    }
    auto bind_gru = [&](const std::string& prefix, const GRUParams& p) {
        GruNodes gn;
        gn.W_z = g.parameter(prefix + ".W_z", p.W_z);
        gn.W_r = g.parameter(prefix + ".W_r", p.W_r);
        gn.W_h = g.parameter(prefix + ".W_h", p.W_h);
        gn.U_z = g.parameter(prefix + ".U_z", p.U_z);
        gn.U_r = g.parameter(prefix + ".U_r", p.U_r);
        gn.U_h = g.parameter(prefix + ".U_h", p.U_h);
        gn.b_z = g.parameter(prefix + ".b_z", p.b_z);
        gn.b_r = g.parameter(prefix + ".b_r", p.b_r);
        gn.b_h = g.parameter(prefix + ".b_h", p.b_h);
        return gn;
    };
    n.gru_fw = bind_gru("gru_fw", m.gru_fw);
    n.gru_bw = bind_gru("gru_bw", m.gru_bw);
    n.head_W = g.parameter("head.W", m.head_W);
    n.head_b = g.parameter("head.b", m.head_b);
    return n;
}

// ---------------------------------------------------------------------------
// residual block and full forward pass
// ---------------------------------------------------------------------------

// Pre-activation residual block, rows of the overview table in order:
//   BN + ReLU + Dropout, Conv(window1), BN + ReLU + Dropout, Conv(window2),
//   Merge, MaxPool(pool).
// Concat joins the block input with the residual branch along channels
// (c_out = c_in + filters); Add sums them (channel counts must match).
// `bn_update` (optional, two slots) receives running-stat EMA updates.
inline NodeId residual_block(Graph& g, NodeId x, const BlockNodes& p,
                             const ResidualBlockParams& vals, LayerMode mode, MergeMode merge,
                             double dropout_p, int pool, Rng& rng,
                             BNRunningStats bn1_update = {}, BNRunningStats bn2_update = {}) {
    NodeId h = batch_norm(g, x, p.bn1_gamma, p.bn1_beta, vals.bn1, mode, bn1_update);
    h = relu(g, h);
    h = dropout(g, h, dropout_p, mode, rng);
    h = conv1d_same(g, h, p.conv1_W, p.conv1_b);
    h = batch_norm(g, h, p.bn2_gamma, p.bn2_beta, vals.bn2, mode, bn2_update);
    h = relu(g, h);
    h = dropout(g, h, dropout_p, mode, rng);
    h = conv1d_same(g, h, p.conv2_W, p.conv2_b);
    NodeId merged;
    if (merge == MergeMode::Concat) {
        merged = concat_channels(g, x, h);
    } else {
        const Tensor& xi = g.value(x);
        const Tensor& f = g.value(h);
        if (xi.shape.back() != f.shape.back())
            throw ConfigError("residual add: input has " + std::to_string(xi.shape.back()) +
                              " channels, residual branch " + std::to_string(f.shape.back()));
        merged = add(g, x, h);
    }
    return max_pool1d(g, merged, static_cast<std::size_t>(pool));
}

// embed -> residual blocks -> bi-GRU -> dense softmax; output rows are valid
// probability distributions over the label vocabulary. In Train mode the
// model's batch-norm running statistics are updated in place.
inline NodeId forward(Graph& g, Model& model, const ModelNodes& nodes, const ByteBatch& batch,
                      LayerMode mode, Rng& rng) {
    const ModelConfig& cfg = model.config;
    std::size_t len = batch.len;
    for (int i = 0; i < cfg.n_blocks; ++i) len /= static_cast<std::size_t>(cfg.pool);
    if (len < 1)
        throw ConfigError("sequence length " + std::to_string(batch.len) +
                          " collapses to nothing after " + std::to_string(cfg.n_blocks) +
                          " blocks");

    NodeId h = embed(g, batch, nodes.embedding);
    for (int i = 0; i < cfg.n_blocks; ++i) {
        ResidualBlockParams& vals = model.blocks[static_cast<std::size_t>(i)];
        BNRunningStats u1{}, u2{};
        if (mode == LayerMode::Train) {
            u1 = {&vals.bn1.running_mean, &vals.bn1.running_var};
            u2 = {&vals.bn2.running_mean, &vals.bn2.running_var};
        }
        h = residual_block(g, h, nodes.blocks[static_cast<std::size_t>(i)], vals, mode, cfg.merge,
                           cfg.block_dropout, cfg.pool, rng, u1, u2);
    }

    GruDropoutMasks fw_masks, bw_masks;
    const GruDropoutMasks* fw_ptr = nullptr;
    const GruDropoutMasks* bw_ptr = nullptr;
    if (mode == LayerMode::Train && cfg.gru_dropout > 0.0) {
        const std::size_t din = static_cast<std::size_t>(cfg.gru_input_dim());
        const std::size_t hid = static_cast<std::size_t>(cfg.gru_hidden);
        fw_masks.input = dropout_mask(Shape{batch.batch, din}, cfg.gru_dropout, rng);
        fw_masks.recurrent = dropout_mask(Shape{batch.batch, hid}, cfg.gru_dropout, rng);
        bw_masks.input = dropout_mask(Shape{batch.batch, din}, cfg.gru_dropout, rng);
        bw_masks.recurrent = dropout_mask(Shape{batch.batch, hid}, cfg.gru_dropout, rng);
        fw_ptr = &fw_masks;
        bw_ptr = &bw_masks;
    }
    NodeId sent = bigru_encode(g, h, nodes.gru_fw, nodes.gru_bw, fw_ptr, bw_ptr);
    return dense_softmax(g, sent, nodes.head_W, nodes.head_b);
}

// Inference convenience: probabilities for a padded batch.
inline Tensor predict_probs(Model& model, const ByteBatch& batch) {
    Graph g;
    ModelNodes nodes = bind_model(g, model);
    Rng rng(0);  // unused in Infer mode
    return g.value(forward(g, model, nodes, batch, LayerMode::Infer, rng));
}

}  // namespace resident
