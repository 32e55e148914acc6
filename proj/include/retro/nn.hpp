#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "retro/common.hpp"
#include "retro/tape.hpp"

namespace retro {

enum class Activation { identity, relu, tanh };

// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_uniform(int fan_in, int fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (double& v : w.raw()) v = rng.uniform(-a, a);
    return w;
}

struct DenseLayer {
    Param* w = nullptr;  // in x out
    Param* b = nullptr;  // 1 x out
    Activation act = Activation::identity;

    Tape::Id forward(Tape& t, Tape::Id x) const {
        Tape::Id y = t.add_row(t.matmul(x, t.param(*w)), t.param(*b));
        switch (act) {
            case Activation::relu: return t.relu(y);
            case Activation::tanh: return t.tanh_op(y);
            case Activation::identity: return y;
        }
        return y;
    }
};

// Fully connected stack. Weights are Xavier-uniform, biases zero; parameters
// register in layer order so two models built with the same prefix and dims
// share a checkpoint layout.
struct Mlp {
    std::vector<DenseLayer> layers;

    static Mlp create(ParamStore& store, const std::string& prefix,
                      const std::vector<int>& dims, const std::vector<Activation>& acts,
                      Rng& rng) {
        if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
        if (acts.size() != dims.size() - 1) throw ConfigError("mlp: one activation per layer");
        Mlp m;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            DenseLayer layer;
            layer.w = &store.add(prefix + ".l" + std::to_string(l) + ".w",
                                 xavier_uniform(dims[l], dims[l + 1], rng));
            layer.b = &store.add(prefix + ".l" + std::to_string(l) + ".b", 1, dims[l + 1]);
            layer.act = acts[l];
            m.layers.push_back(layer);
        }
        return m;
    }

    Tape::Id forward(Tape& t, Tape::Id x) const {
        Tape::Id y = x;
        for (const auto& l : layers) y = l.forward(t, y);
        return y;
    }
};

// Single-head scaled dot-product attention. q: n_q x d, k/v: n_k x d rows;
// keep[j] marks key j as attendable. Scores are q k^T / sqrt(d).
inline Tape::Id scaled_dot_attention(Tape& t, Tape::Id q, Tape::Id k, Tape::Id v,
                                     const std::vector<bool>& keep) {
    int d = t.val(q).cols();
    if (t.val(k).cols() != d) throw ConfigError("attention: query/key width mismatch");
    if (t.val(k).rows() != t.val(v).rows()) throw ConfigError("attention: key/value count mismatch");
    Tape::Id scores = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    Tape::Id weights = t.softmax_rows_masked(scores, keep);
    return t.matmul(weights, v);
}

// Attention with learned query/key/value projections and an output projection.
struct AttentionBlock {
    Param* wq = nullptr;
    Param* wk = nullptr;
    Param* wv = nullptr;
    Param* wo = nullptr;
    Param* bo = nullptr;

    static AttentionBlock create(ParamStore& store, const std::string& prefix,
                                 int d_model, Rng& rng) {
        AttentionBlock blk;
        blk.wq = &store.add(prefix + ".wq", xavier_uniform(d_model, d_model, rng));
        blk.wk = &store.add(prefix + ".wk", xavier_uniform(d_model, d_model, rng));
        blk.wv = &store.add(prefix + ".wv", xavier_uniform(d_model, d_model, rng));
        blk.wo = &store.add(prefix + ".wo", xavier_uniform(d_model, d_model, rng));
        blk.bo = &store.add(prefix + ".bo", 1, d_model);
        return blk;
    }

    Tape::Id forward(Tape& t, Tape::Id queries, Tape::Id keys_values,
                     const std::vector<bool>& keep) const {
        Tape::Id q = t.matmul(queries, t.param(*wq));
        Tape::Id k = t.matmul(keys_values, t.param(*wk));
        Tape::Id v = t.matmul(keys_values, t.param(*wv));
        Tape::Id attended = scaled_dot_attention(t, q, k, v, keep);
        return t.add_row(t.matmul(attended, t.param(*wo)), t.param(*bo));
    }
};

// Classic sinusoidal table: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
// PE(pos, 2i+1) = cos(pos / 10000^(2i/d)).
inline Matrix sinusoidal_positional_encoding(int length, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("positional encoding: dim must be even");
    if (length < 0) throw ConfigError("positional encoding: negative length");
    Matrix pe(length, dim);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < dim / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / dim);
            pe(pos, 2 * i) = std::sin(pos * freq);
            pe(pos, 2 * i + 1) = std::cos(pos * freq);
        }
    }
    return pe;
}

}  // namespace retro
