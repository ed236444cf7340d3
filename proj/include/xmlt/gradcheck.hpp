// Central finite-difference verification of every op, layer and model loss,
// in double precision. Used by both the test suites and the gradcheck CLI
// subcommand.
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "xmlt/layers.hpp"
#include "xmlt/models.hpp"
#include "xmlt/tensor.hpp"

namespace xmlt::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0;
    bool ok = true;
};

constexpr double kTol = 1e-3;
constexpr double kStep = 1e-5;

// loss_fn must be a pure function of the params' current values
inline CheckResult check(const std::string& name, const std::vector<Tensor<double>*>& params,
                         const std::function<Tensor<double>(Tape<double>&)>& loss_fn, double tol = kTol) {
    CheckResult res;
    res.name = name;

    Tape<double> tape;
    Tensor<double> loss = loss_fn(tape);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto* p : params) analytic.push_back(p->grad());

    auto eval = [&]() {
        Tape<double> t(false);
        return loss_fn(t).item();
    };
    for (std::size_t pi = 0; pi < params.size(); pi++) {
        auto& vals = params[pi]->values();
        for (std::size_t j = 0; j < vals.size(); j++) {
            const double orig = vals[j];
            vals[j] = orig + kStep;
            const double fp = eval();
            vals[j] = orig - kStep;
            const double fm = eval();
            vals[j] = orig;
            const double numeric = (fp - fm) / (2.0 * kStep);
            const double a = analytic[pi][j];
            const double denom = std::max(std::abs(a), std::abs(numeric));
            if (denom < 1e-6) continue;  // both effectively zero
            const double rel = std::abs(a - numeric) / denom;
            res.max_rel_err = std::max(res.max_rel_err, rel);
            if (rel > tol) res.ok = false;
        }
        params[pi]->zero_grad();
    }
    return res;
}

namespace detail {

inline Tensor<double> randn(Shape shape, std::mt19937& rng, double scale = 1.0, bool tracked = true) {
    std::normal_distribution<double> d(0.0, scale);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = d(rng);
    t.set_tracked(tracked);
    return t;
}

}  // namespace detail

// One pass over every tensor op at small random shapes.
inline std::vector<CheckResult> check_ops(std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::vector<CheckResult> results;
    auto run = [&](const std::string& name, std::vector<Tensor<double>*> params,
                   std::function<Tensor<double>(Tape<double>&)> fn) { results.push_back(check(name, params, fn)); };

    const std::size_t m = 2 + rng() % 5, n = 2 + rng() % 5, p = 2 + rng() % 4;

    {
        auto A = detail::randn({m, n}, rng);
        auto x = detail::randn({n}, rng);
        auto c = detail::randn({m}, rng, 1.0, false);
        run("matmul_vec", {&A, &x}, [&](Tape<double>& t) { return t.dot(t.matmul(A, x), c); });
    }
    {
        auto A = detail::randn({m, n}, rng);
        auto B = detail::randn({n, p}, rng);
        auto c = detail::randn({p}, rng, 1.0, false);
        run("matmul_mat", {&A, &B}, [&](Tape<double>& t) { return t.dot(t.mean(t.matmul(A, B)), c); });
    }
    {
        auto a = detail::randn({n}, rng);
        auto b = detail::randn({n}, rng);
        auto c = detail::randn({n}, rng, 1.0, false);
        run("add", {&a, &b}, [&](Tape<double>& t) { return t.dot(t.add(a, b), c); });
        run("mul", {&a, &b}, [&](Tape<double>& t) { return t.dot(t.mul(a, b), c); });
        run("affine", {&a}, [&](Tape<double>& t) { return t.dot(t.affine(a, 1.7, -0.3), c); });
        run("tanh", {&a}, [&](Tape<double>& t) { return t.dot(t.tanh(a), c); });
        run("sigmoid", {&a}, [&](Tape<double>& t) { return t.dot(t.sigmoid(a), c); });
        run("mean_vec", {&a}, [&](Tape<double>& t) { return t.mean(a); });
        run("max_vec", {&a}, [&](Tape<double>& t) { return t.max(a).values; });
    }
    {
        auto a = detail::randn({n}, rng);
        auto b = detail::randn({m}, rng);
        auto c = detail::randn({n + m}, rng, 1.0, false);
        run("concat", {&a, &b}, [&](Tape<double>& t) { return t.dot(t.concat({a, b}), c); });
    }
    {
        auto X = detail::randn({m, n}, rng);
        auto c = detail::randn({n}, rng, 1.0, false);
        auto cm = detail::randn({m}, rng, 1.0, false);
        run("mean_rows", {&X}, [&](Tape<double>& t) { return t.dot(t.mean(X), c); });
        run("max_rows", {&X}, [&](Tape<double>& t) { return t.dot(t.max(X).values, cm); });
        run("pad_rows", {&X}, [&](Tape<double>& t) { return t.dot(t.mean(t.pad_rows(X, m + 2)), c); });
    }
    {
        auto E = detail::randn({m + 2, n}, rng);
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < 5; i++) ids.push_back(rng() % (m + 2));
        auto c = detail::randn({n}, rng, 1.0, false);
        run("gather_rows", {&E}, [&](Tape<double>& t) { return t.dot(t.mean(t.gather_rows(E, ids)), c); });
        const std::size_t rid = rng() % (m + 2);
        run("gather_row", {&E}, [&](Tape<double>& t) { return t.dot(t.gather_row(E, rid), c); });
    }
    {
        const std::size_t len = 5 + rng() % 3, d = 2 + rng() % 3, ch = 2 + rng() % 3, w = 3;
        auto seq = detail::randn({len, d}, rng);
        auto filt = detail::randn({ch, w, d}, rng);
        auto c = detail::randn({ch}, rng, 1.0, false);
        run("conv1d", {&seq, &filt}, [&](Tape<double>& t) { return t.dot(t.max(t.conv1d(seq, filt)).values, c); });
    }
    {
        const std::size_t k = 4 + rng() % 3;
        auto logits = detail::randn({k}, rng);
        std::vector<bool> mask(k, false);
        for (std::size_t i = 0; i < k; i++) mask[i] = rng() % 3 != 0;
        mask[rng() % k] = true;
        auto c = detail::randn({k}, rng, 1.0, false);
        run("masked_softmax", {&logits}, [&](Tape<double>& t) { return t.dot(t.masked_softmax(logits, mask), c); });
    }
    {
        auto r0 = detail::randn({n}, rng);
        auto r1 = detail::randn({n}, rng);
        auto r2 = detail::randn({n}, rng);
        auto wts = detail::randn({3}, rng);
        auto c = detail::randn({n}, rng, 1.0, false);
        run("stack_rows+weighted_sum", {&r0, &r1, &r2, &wts},
            [&](Tape<double>& t) { return t.dot(t.weighted_sum(t.stack_rows({r0, r1, r2}), wts), c); });
    }
    {
        auto a = detail::randn({n}, rng);
        auto b = detail::randn({n}, rng);
        run("dot", {&a, &b}, [&](Tape<double>& t) { return t.dot(a, b); });
    }
    {
        const std::size_t L = 3 + rng() % 3;
        auto logits = detail::randn({L}, rng);
        std::vector<double> target(L);
        for (auto& t : target) t = double(rng() % 2);
        run("bce_loss", {&logits}, [&](Tape<double>& t) { return t.bce_loss(t.sigmoid(logits), target); });
    }
    {
        const std::size_t L = 3 + rng() % 3;
        std::vector<Tensor<double>> logit_rows;
        std::vector<Tensor<double>*> params;
        for (std::size_t l = 0; l < L; l++) logit_rows.push_back(detail::randn({2}, rng));
        for (auto& t : logit_rows) params.push_back(&t);
        std::vector<std::size_t> target(L);
        for (auto& t : target) t = rng() % 2;
        const std::vector<bool> all2(2, true);
        run("cce_loss", params, [&](Tape<double>& t) {
            std::vector<Tensor<double>> rows;
            for (auto& lr : logit_rows) rows.push_back(t.masked_softmax(lr, all2));
            return t.cce_loss(t.stack_rows(rows), target);
        });
    }
    return results;
}

// Layers composed to a scalar loss.
inline std::vector<CheckResult> check_layers(std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::vector<CheckResult> results;
    auto run = [&](const std::string& name, std::vector<Tensor<double>*> params,
                   std::function<Tensor<double>(Tape<double>&)> fn) { results.push_back(check(name, params, fn)); };

    const std::size_t in = 3, out = 4, hidden = 3;

    {
        DenseLayer<double> dense(out, in, rng);
        auto x = detail::randn({in}, rng);
        auto c = detail::randn({out}, rng, 1.0, false);
        run("layer.dense", {&dense.W, &dense.b, &x}, [&](Tape<double>& t) { return t.dot(dense.forward(t, x), c); });
    }
    {
        ConvBlock<double> conv(3, 3, in, rng);
        auto x = detail::randn({2, in}, rng);  // shorter than the width, exercises padding
        auto c = detail::randn({3}, rng, 1.0, false);
        run("layer.conv_maxpool", {&conv.filters, &x},
            [&](Tape<double>& t) { return t.dot(conv.forward(t, x).values, c); });
    }
    {
        GruCell<double> cell(hidden, in, rng);
        auto x = detail::randn({in}, rng);
        auto h = detail::randn({hidden}, rng, 0.5);
        auto c = detail::randn({hidden}, rng, 1.0, false);
        std::vector<Tensor<double>*> params = {&cell.Wz, &cell.Uz, &cell.bz, &cell.Wr, &cell.Ur,
                                               &cell.br, &cell.Wh, &cell.Uh, &cell.bh, &x,
                                               &h};
        run("layer.gru_step", params, [&](Tape<double>& t) { return t.dot(cell.step(t, x, h), c); });
    }
    {
        GruCell<double> fwd(hidden, in, rng), bwd(hidden, in, rng);
        std::vector<Tensor<double>> seq;
        for (int i = 0; i < 3; i++) seq.push_back(detail::randn({in}, rng));
        auto c = detail::randn({2 * hidden}, rng, 1.0, false);
        std::vector<Tensor<double>*> params = {&fwd.Wz, &fwd.Uh, &bwd.Wz, &bwd.Uh, &seq[0], &seq[2]};
        run("layer.bigru", params, [&](Tape<double>& t) {
            auto outs = bigru(t, seq, fwd, bwd);
            Tensor<double> acc = outs[0];
            for (std::size_t i = 1; i < outs.size(); i++) acc = t.add(acc, outs[i]);
            return t.dot(acc, c);
        });
    }
    {
        AttentionParams<double> att(2 * hidden, rng);
        std::vector<Tensor<double>> inputs;
        for (int i = 0; i < 4; i++) inputs.push_back(detail::randn({2 * hidden}, rng));
        auto c = detail::randn({2 * hidden}, rng, 1.0, false);
        std::vector<Tensor<double>*> params = {&att.w, &att.v, &inputs[0], &inputs[3]};
        run("layer.attend", params, [&](Tape<double>& t) { return t.dot(attend(t, inputs, att).context, c); });
    }
    return results;
}

// Full model losses wrt every parameter, at tiny dims.
inline std::vector<CheckResult> check_models(std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::vector<CheckResult> results;

    const std::size_t vocab = 7, n_emb = 3, labels = 3;
    PreprocessedDoc doc;
    doc.sentences = {{2, 3, 4, 2}, {5, 6}};
    doc.spans = {{0, 1}, {1, 2}};
    std::vector<std::uint8_t> gold = {1, 0, 1};

    {
        CbowModel<double> model(vocab, n_emb, labels, rng);
        std::vector<Tensor<double>*> params;
        for (auto& [name, t] : model.named_params()) params.push_back(t);
        results.push_back(check("model.cbow", params, [&](Tape<double>& t) { return model.doc_loss(t, doc, gold); }));
    }
    {
        CnnModel<double> model(vocab, n_emb, 4, 3, labels, rng);
        std::vector<Tensor<double>*> params;
        for (auto& [name, t] : model.named_params()) params.push_back(t);
        results.push_back(check("model.cnn", params, [&](Tape<double>& t) { return model.doc_loss(t, doc, gold); }));
    }
    {
        HagruModel<double> model(vocab, n_emb, 2, labels, rng);
        std::vector<Tensor<double>*> params;
        for (auto& [name, t] : model.named_params()) params.push_back(t);
        results.push_back(check("model.hagru", params, [&](Tape<double>& t) { return model.doc_loss(t, doc, gold); }));
    }
    return results;
}

struct SuiteResult {
    std::vector<CheckResult> checks;
    bool ok = true;
    double max_rel_err = 0;
};

inline SuiteResult run_suite(std::size_t n_seeds = 5) {
    SuiteResult suite;
    for (std::uint32_t seed = 0; seed < n_seeds; seed++) {
        for (auto group : {check_ops(seed), check_layers(seed), check_models(seed)})
            for (auto& r : group) {
                suite.ok = suite.ok && r.ok;
                suite.max_rel_err = std::max(suite.max_rel_err, r.max_rel_err);
                suite.checks.push_back(std::move(r));
            }
    }
    return suite;
}

}  // namespace xmlt::gradcheck
