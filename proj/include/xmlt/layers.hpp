// Neural building blocks: embeddings, dense, conv + global max pool,
// GRU cell, bidirectional GRU, additive attention.
#pragma once

#include <random>
#include <vector>

#include "xmlt/tensor.hpp"

namespace xmlt {

namespace init {

// uniform(-a, a) with a = sqrt(6/(fan_in+fan_out))
template <typename T>
Tensor<T> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937& rng) {
    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = T(dist(rng));
    return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, double lo, double hi, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = T(dist(rng));
    return t;
}

}  // namespace init

constexpr std::size_t kPadId = 0;
constexpr std::size_t kUnkId = 1;

// Token embedding table, one row per vocabulary id. The PAD row stays at
// zero: its gradient is cleared before every optimizer step.
template <typename T>
struct EmbeddingLayer {
    Tensor<T> table;  // (V x n_emb)

    EmbeddingLayer() = default;
    EmbeddingLayer(std::size_t vocab, std::size_t n_emb, std::mt19937& rng)
        : table(init::uniform<T>({vocab, n_emb}, -0.05, 0.05, rng)) {
        for (std::size_t j = 0; j < n_emb; j++) table.values()[kPadId * n_emb + j] = T(0);
        table.set_tracked(true);
    }

    std::size_t dim() const { return table.dim(1); }
    std::size_t vocab_size() const { return table.dim(0); }

    Tensor<T> lookup(Tape<T>& tape, const std::vector<std::size_t>& ids) const {
        return tape.gather_rows(table, ids);
    }

    void clear_pad_grad() {
        auto& g = table.grad();
        for (std::size_t j = 0; j < table.dim(1); j++) g[kPadId * table.dim(1) + j] = T(0);
    }
};

template <typename T>
struct DenseLayer {
    Tensor<T> W;  // (out x in)
    Tensor<T> b;  // (out)

    DenseLayer() = default;
    DenseLayer(std::size_t out, std::size_t in, std::mt19937& rng)
        : W(init::xavier<T>({out, in}, in, out, rng)), b(Shape{out}) {
        W.set_tracked(true);
        b.set_tracked(true);
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const { return tape.add(tape.matmul(W, x), b); }
};

// 1-d convolution bank with per-channel global max pooling. Sequences
// shorter than the filter width are right-padded with zero rows, which is
// what a PAD embedding contributes.
template <typename T>
struct ConvBlock {
    Tensor<T> filters;  // (channels x width x n_emb)

    ConvBlock() = default;
    ConvBlock(std::size_t channels, std::size_t width, std::size_t n_emb, std::mt19937& rng)
        : filters(init::xavier<T>({channels, width, n_emb}, width * n_emb, channels, rng)) {
        filters.set_tracked(true);
    }

    std::size_t channels() const { return filters.dim(0); }
    std::size_t width() const { return filters.dim(1); }

    struct Pooled {
        Tensor<T> values;                 // (channels)
        std::vector<std::size_t> argmax;  // winning window index per channel
    };

    Pooled forward(Tape<T>& tape, const Tensor<T>& embedded) const {
        Tensor<T> padded = tape.pad_rows(embedded, width());
        Tensor<T> conv = tape.conv1d(padded, filters);
        auto m = tape.max(conv);
        return {m.values, std::move(m.argmax)};
    }
};

// Update/reset/candidate gates, each with input, recurrent and bias
// parameters. h = (1-z) (.) h_prev + z (.) h~
template <typename T>
struct GruCell {
    Tensor<T> Wz, Uz, bz;
    Tensor<T> Wr, Ur, br;
    Tensor<T> Wh, Uh, bh;

    GruCell() = default;
    GruCell(std::size_t hidden, std::size_t input, std::mt19937& rng)
        : Wz(init::xavier<T>({hidden, input}, input, hidden, rng)),
          Uz(init::xavier<T>({hidden, hidden}, hidden, hidden, rng)),
          bz(Shape{hidden}),
          Wr(init::xavier<T>({hidden, input}, input, hidden, rng)),
          Ur(init::xavier<T>({hidden, hidden}, hidden, hidden, rng)),
          br(Shape{hidden}),
          Wh(init::xavier<T>({hidden, input}, input, hidden, rng)),
          Uh(init::xavier<T>({hidden, hidden}, hidden, hidden, rng)),
          bh(Shape{hidden}) {
        for (auto* t : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh}) t->set_tracked(true);
    }

    std::size_t hidden() const { return Wz.dim(0); }
    std::size_t input() const { return Wz.dim(1); }

    Tensor<T> step(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& h_prev) const {
        Tensor<T> z = tape.sigmoid(tape.add(tape.add(tape.matmul(Wz, x), tape.matmul(Uz, h_prev)), bz));
        Tensor<T> r = tape.sigmoid(tape.add(tape.add(tape.matmul(Wr, x), tape.matmul(Ur, h_prev)), br));
        Tensor<T> rh = tape.mul(r, h_prev);
        Tensor<T> cand = tape.tanh(tape.add(tape.add(tape.matmul(Wh, x), tape.matmul(Uh, rh)), bh));
        Tensor<T> keep = tape.mul(tape.affine(z, T(-1), T(1)), h_prev);
        return tape.add(keep, tape.mul(z, cand));
    }
};

// Output at position t is concat(fwd state after inputs 0..t,
// bwd state after inputs n-1..t): each element is (2 * hidden).
template <typename T>
std::vector<Tensor<T>> bigru(Tape<T>& tape, const std::vector<Tensor<T>>& seq, const GruCell<T>& fwd,
                             const GruCell<T>& bwd) {
    if (seq.empty()) throw std::invalid_argument("bigru: empty sequence");
    const std::size_t n = seq.size();
    std::vector<Tensor<T>> fwd_states(n), bwd_states(n);
    Tensor<T> h(Shape{fwd.hidden()});
    for (std::size_t t = 0; t < n; t++) {
        h = fwd.step(tape, seq[t], h);
        fwd_states[t] = h;
    }
    h = Tensor<T>(Shape{bwd.hidden()});
    for (std::size_t t = n; t-- > 0;) {
        h = bwd.step(tape, seq[t], h);
        bwd_states[t] = h;
    }
    std::vector<Tensor<T>> out(n);
    for (std::size_t t = 0; t < n; t++) out[t] = tape.concat({fwd_states[t], bwd_states[t]});
    return out;
}

// AttWeight(in_i) = v . tanh(w . in_i), softmax-normalized over the
// unmasked inputs; the weights are kept for explanation.
template <typename T>
struct AttentionParams {
    Tensor<T> w;  // (dim x dim)
    Tensor<T> v;  // (dim)

    AttentionParams() = default;
    AttentionParams(std::size_t dim, std::mt19937& rng)
        : w(init::xavier<T>({dim, dim}, dim, dim, rng)), v(init::xavier<T>({dim}, dim, 1, rng)) {
        w.set_tracked(true);
        v.set_tracked(true);
    }

    std::size_t dim() const { return v.dim(0); }
};

template <typename T>
struct Attended {
    Tensor<T> context;  // (dim)
    Tensor<T> weights;  // (k), sums to 1 over unmasked inputs
};

template <typename T>
Attended<T> attend(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, const AttentionParams<T>& params,
                   const std::vector<bool>& mask) {
    if (inputs.empty()) throw std::invalid_argument("attend: no inputs");
    if (inputs.size() != mask.size())
        throw std::invalid_argument("attend: " + std::to_string(inputs.size()) + " inputs vs mask of " +
                                    std::to_string(mask.size()));
    std::vector<Tensor<T>> logits(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); i++)
        logits[i] = tape.dot(params.v, tape.tanh(tape.matmul(params.w, inputs[i])));
    Tensor<T> weights = tape.masked_softmax(tape.concat(logits), mask);
    Tensor<T> context = tape.weighted_sum(tape.stack_rows(inputs), weights);
    return {context, weights};
}

template <typename T>
Attended<T> attend(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, const AttentionParams<T>& params) {
    return attend(tape, inputs, params, std::vector<bool>(inputs.size(), true));
}

}  // namespace xmlt
