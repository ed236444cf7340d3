// Dense tensors with a recording tape for reverse-mode gradients.
//
// Storage is templated on the scalar type: training code instantiates float
// (32-bit storage, matching the checkpoint wire format), gradient checks
// instantiate double. All reductions accumulate in double regardless of the
// storage type.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmlt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); i++) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Cheap-copy handle to shared storage. Tape nodes capture Tensor handles, so
// intermediate buffers stay alive until backward has run.
template <typename T>
class Tensor {
    struct Storage {
        Shape shape;
        std::vector<T> val;
        std::vector<T> grad;  // allocated when tracked
        bool tracked = false;
    };
    std::shared_ptr<Storage> s_;

public:
    Tensor() : s_(std::make_shared<Storage>()) {}
    explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
        s_->shape = std::move(shape);
        s_->val.assign(shape_numel(s_->shape), fill);
    }
    Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        s_->shape = std::move(shape);
        s_->val = std::move(values);
    }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t numel() const { return s_->val.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape[i]; }

    std::vector<T>& values() { return s_->val; }
    const std::vector<T>& values() const { return s_->val; }
    T* data() { return s_->val.data(); }
    const T* data() const { return s_->val.data(); }
    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
        return s_->val[0];
    }

    bool tracked() const { return s_->tracked; }
    void set_tracked(bool t) {
        s_->tracked = t;
        if (t && s_->grad.size() != s_->val.size()) s_->grad.assign(s_->val.size(), T(0));
    }
    std::vector<T>& grad() {
        if (!s_->tracked) throw std::logic_error("grad: tensor is not tracked");
        return s_->grad;
    }
    const std::vector<T>& grad() const {
        if (!s_->tracked) throw std::logic_error("grad: tensor is not tracked");
        return s_->grad;
    }
    void zero_grad() {
        if (s_->tracked) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }
};

// Execution-ordered record of backward rules. One tape per forward pass;
// distinct tapes may run on distinct threads.
template <typename T>
class Tape {
    std::vector<std::function<void()>> nodes_;
    bool grad_enabled_ = true;
    bool used_ = false;

    static constexpr double kProbEps = 1e-7;

    bool track(std::initializer_list<const Tensor<T>*> inputs) const {
        if (!grad_enabled_) return false;
        for (auto* t : inputs)
            if (t->tracked()) return true;
        return false;
    }
    template <typename F>
    void record(Tensor<T>& out, F&& fn) {
        out.set_tracked(true);
        nodes_.emplace_back(std::forward<F>(fn));
    }

public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }
    void reset() {
        nodes_.clear();
        used_ = false;
    }

    // matmul: (m x n)·(n) -> (m) or (m x n)·(n x p) -> (m x p)
    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.rank() != 2) shape_error("matmul", a.shape(), b.shape());
        const std::size_t m = a.dim(0), n = a.dim(1);
        if (b.rank() == 1) {
            if (b.dim(0) != n) shape_error("matmul", a.shape(), b.shape());
            Tensor<T> out(Shape{m});
            const T* ad = a.data();
            const T* bd = b.data();
            T* od = out.data();
            for (std::size_t i = 0; i < m; i++) {
                double acc = 0.0;
                const T* row = ad + i * n;
                for (std::size_t j = 0; j < n; j++) acc += double(row[j]) * double(bd[j]);
                od[i] = T(acc);
            }
            if (track({&a, &b})) {
                Tensor<T> av = a, bv = b;
                record(out, [av, bv, out]() mutable {
                    const std::size_t m2 = av.dim(0), n2 = av.dim(1);
                    const auto& g = out.grad();
                    if (av.tracked()) {
                        auto& ga = av.grad();
                        const T* bd2 = bv.data();
                        for (std::size_t i = 0; i < m2; i++)
                            for (std::size_t j = 0; j < n2; j++) ga[i * n2 + j] += g[i] * bd2[j];
                    }
                    if (bv.tracked()) {
                        auto& gb = bv.grad();
                        const T* ad2 = av.data();
                        for (std::size_t i = 0; i < m2; i++) {
                            const T gi = g[i];
                            const T* row = ad2 + i * n2;
                            for (std::size_t j = 0; j < n2; j++) gb[j] += gi * row[j];
                        }
                    }
                });
            }
            return out;
        }
        if (b.rank() != 2 || b.dim(0) != n) shape_error("matmul", a.shape(), b.shape());
        const std::size_t p = b.dim(1);
        Tensor<T> out(Shape{m, p});
        {
            const T* ad = a.data();
            const T* bd = b.data();
            T* od = out.data();
            for (std::size_t i = 0; i < m; i++)
                for (std::size_t k = 0; k < p; k++) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; j++) acc += double(ad[i * n + j]) * double(bd[j * p + k]);
                    od[i * p + k] = T(acc);
                }
        }
        if (track({&a, &b})) {
            Tensor<T> av = a, bv = b;
            record(out, [av, bv, out]() mutable {
                const std::size_t m2 = av.dim(0), n2 = av.dim(1), p2 = bv.dim(1);
                const auto& g = out.grad();
                if (av.tracked()) {
                    auto& ga = av.grad();
                    const T* bd2 = bv.data();
                    for (std::size_t i = 0; i < m2; i++)
                        for (std::size_t j = 0; j < n2; j++) {
                            double acc = 0.0;
                            for (std::size_t k = 0; k < p2; k++) acc += double(g[i * p2 + k]) * double(bd2[j * p2 + k]);
                            ga[i * n2 + j] += T(acc);
                        }
                }
                if (bv.tracked()) {
                    auto& gb = bv.grad();
                    const T* ad2 = av.data();
                    for (std::size_t j = 0; j < n2; j++)
                        for (std::size_t k = 0; k < p2; k++) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < m2; i++) acc += double(ad2[i * n2 + j]) * double(g[i * p2 + k]);
                            gb[j * p2 + k] += T(acc);
                        }
                }
            });
        }
        return out;
    }

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
        Tensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.numel(); i++) out.data()[i] = a.data()[i] + b.data()[i];
        if (track({&a, &b})) {
            Tensor<T> av = a, bv = b;
            record(out, [av, bv, out]() mutable {
                const auto& g = out.grad();
                if (av.tracked()) {
                    auto& ga = av.grad();
                    for (std::size_t i = 0; i < g.size(); i++) ga[i] += g[i];
                }
                if (bv.tracked()) {
                    auto& gb = bv.grad();
                    for (std::size_t i = 0; i < g.size(); i++) gb[i] += g[i];
                }
            });
        }
        return out;
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
        Tensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.numel(); i++) out.data()[i] = a.data()[i] * b.data()[i];
        if (track({&a, &b})) {
            Tensor<T> av = a, bv = b;
            record(out, [av, bv, out]() mutable {
                const auto& g = out.grad();
                if (av.tracked()) {
                    auto& ga = av.grad();
                    for (std::size_t i = 0; i < g.size(); i++) ga[i] += g[i] * bv.data()[i];
                }
                if (bv.tracked()) {
                    auto& gb = bv.grad();
                    for (std::size_t i = 0; i < g.size(); i++) gb[i] += g[i] * av.data()[i];
                }
            });
        }
        return out;
    }

    // alpha*x + beta, elementwise with scalar constants
    Tensor<T> affine(const Tensor<T>& x, T alpha, T beta) {
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); i++) out.data()[i] = alpha * x.data()[i] + beta;
        if (track({&x})) {
            Tensor<T> xv = x;
            record(out, [xv, out, alpha]() mutable {
                const auto& g = out.grad();
                auto& gx = xv.grad();
                for (std::size_t i = 0; i < g.size(); i++) gx[i] += alpha * g[i];
            });
        }
        return out;
    }

    Tensor<T> tanh(const Tensor<T>& x) {
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); i++) out.data()[i] = std::tanh(x.data()[i]);
        if (track({&x})) {
            Tensor<T> xv = x;
            record(out, [xv, out]() mutable {
                const auto& g = out.grad();
                auto& gx = xv.grad();
                const T* y = out.data();
                for (std::size_t i = 0; i < g.size(); i++) gx[i] += g[i] * (T(1) - y[i] * y[i]);
            });
        }
        return out;
    }

    Tensor<T> sigmoid(const Tensor<T>& x) {
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); i++) out.data()[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
        if (track({&x})) {
            Tensor<T> xv = x;
            record(out, [xv, out]() mutable {
                const auto& g = out.grad();
                auto& gx = xv.grad();
                const T* y = out.data();
                for (std::size_t i = 0; i < g.size(); i++) gx[i] += g[i] * y[i] * (T(1) - y[i]);
            });
        }
        return out;
    }

    // concat of rank-1 tensors along axis 0
    Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p.rank() != 1) throw std::invalid_argument("concat: expected rank-1 input, got " + shape_str(p.shape()));
            total += p.dim(0);
        }
        Tensor<T> out(Shape{total});
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.data(), p.data() + p.numel(), out.data() + off);
            off += p.numel();
        }
        bool any = false;
        if (grad_enabled_)
            for (const auto& p : parts)
                if (p.tracked()) any = true;
        if (any) {
            std::vector<Tensor<T>> held = parts;
            record(out, [held, out]() mutable {
                const auto& g = out.grad();
                std::size_t off2 = 0;
                for (auto& p : held) {
                    if (p.tracked()) {
                        auto& gp = p.grad();
                        for (std::size_t i = 0; i < p.numel(); i++) gp[i] += g[off2 + i];
                    }
                    off2 += p.numel();
                }
            });
        }
        return out;
    }

    // mean over axis 0: (n x d) -> (d); rank-1 (n) -> scalar (1)
    Tensor<T> mean(const Tensor<T>& x) {
        if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
        if (x.rank() == 1) {
            const std::size_t n = x.dim(0);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; i++) acc += double(x.data()[i]);
            Tensor<T> out = Tensor<T>::scalar(T(acc / double(n)));
            if (track({&x})) {
                Tensor<T> xv = x;
                record(out, [xv, out, n]() mutable {
                    const T g = out.grad()[0] / T(n);
                    auto& gx = xv.grad();
                    for (std::size_t i = 0; i < n; i++) gx[i] += g;
                });
            }
            return out;
        }
        if (x.rank() != 2) throw std::invalid_argument("mean: expected rank-1 or rank-2, got " + shape_str(x.shape()));
        const std::size_t n = x.dim(0), d = x.dim(1);
        Tensor<T> out(Shape{d});
        for (std::size_t j = 0; j < d; j++) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; i++) acc += double(x.data()[i * d + j]);
            out.data()[j] = T(acc / double(n));
        }
        if (track({&x})) {
            Tensor<T> xv = x;
            record(out, [xv, out, n, d]() mutable {
                const auto& g = out.grad();
                auto& gx = xv.grad();
                for (std::size_t i = 0; i < n; i++)
                    for (std::size_t j = 0; j < d; j++) gx[i * d + j] += g[j] / T(n);
            });
        }
        return out;
    }

    struct MaxResult {
        Tensor<T> values;
        std::vector<std::size_t> argmax;  // first index of the max (tie rule)
    };

    // max over the last axis, argmax recorded: (c x p) -> (c); (n) -> (1)
    MaxResult max(const Tensor<T>& x) {
        std::size_t rows, cols;
        if (x.rank() == 1) {
            rows = 1;
            cols = x.dim(0);
        } else if (x.rank() == 2) {
            rows = x.dim(0);
            cols = x.dim(1);
        } else {
            throw std::invalid_argument("max: expected rank-1 or rank-2, got " + shape_str(x.shape()));
        }
        if (cols == 0) throw std::invalid_argument("max: empty axis");
        MaxResult res{Tensor<T>(x.rank() == 1 ? Shape{1} : Shape{rows}), std::vector<std::size_t>(rows)};
        for (std::size_t i = 0; i < rows; i++) {
            const T* row = x.data() + i * cols;
            std::size_t best = 0;
            for (std::size_t j = 1; j < cols; j++)
                if (row[j] > row[best]) best = j;
            res.values.data()[i] = row[best];
            res.argmax[i] = best;
        }
        if (track({&x})) {
            Tensor<T> xv = x;
            Tensor<T> ov = res.values;
            std::vector<std::size_t> am = res.argmax;
            record(res.values, [xv, ov, am, cols]() mutable {
                const auto& g = ov.grad();
                auto& gx = xv.grad();
                for (std::size_t i = 0; i < am.size(); i++) gx[i * cols + am[i]] += g[i];
            });
        }
        return res;
    }

    // E is (V x d); gathers the given rows into (n x d)
    Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
        if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank-2, got " + shape_str(table.shape()));
        const std::size_t v = table.dim(0), d = table.dim(1);
        for (auto id : ids)
            if (id >= v) throw std::out_of_range("gather_rows: row " + std::to_string(id) + " out of range " + std::to_string(v));
        Tensor<T> out(Shape{ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); i++)
            std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d, out.data() + i * d);
        if (track({&table})) {
            Tensor<T> tv = table;
            std::vector<std::size_t> held = ids;
            record(out, [tv, out, held, d]() mutable {
                const auto& g = out.grad();
                auto& gt = tv.grad();
                for (std::size_t i = 0; i < held.size(); i++)
                    for (std::size_t j = 0; j < d; j++) gt[held[i] * d + j] += g[i * d + j];
            });
        }
        return out;
    }

    // valid 1-d convolution: seq (n x d), filters (c x w x d) -> (c x (n-w+1))
    Tensor<T> conv1d(const Tensor<T>& seq, const Tensor<T>& filters) {
        if (seq.rank() != 2 || filters.rank() != 3 || filters.dim(2) != seq.dim(1))
            shape_error("conv1d", seq.shape(), filters.shape());
        const std::size_t n = seq.dim(0), d = seq.dim(1);
        const std::size_t c = filters.dim(0), w = filters.dim(1);
        if (n < w)
            throw std::invalid_argument("conv1d: sequence length " + std::to_string(n) + " shorter than filter width " +
                                        std::to_string(w));
        const std::size_t p = n - w + 1;
        Tensor<T> out(Shape{c, p});
        {
            const T* sd = seq.data();
            const T* fd = filters.data();
            T* od = out.data();
            for (std::size_t ch = 0; ch < c; ch++)
                for (std::size_t pos = 0; pos < p; pos++) {
                    double acc = 0.0;
                    const T* f = fd + ch * w * d;
                    const T* s = sd + pos * d;
                    for (std::size_t k = 0; k < w * d; k++) acc += double(s[k]) * double(f[k]);
                    od[ch * p + pos] = T(acc);
                }
        }
        if (track({&seq, &filters})) {
            Tensor<T> sv = seq, fv = filters;
            record(out, [sv, fv, out, n, d, c, w, p]() mutable {
                const auto& g = out.grad();
                if (sv.tracked()) {
                    auto& gs = sv.grad();
                    const T* fd = fv.data();
                    for (std::size_t ch = 0; ch < c; ch++)
                        for (std::size_t pos = 0; pos < p; pos++) {
                            const T gv = g[ch * p + pos];
                            const T* f = fd + ch * w * d;
                            for (std::size_t k = 0; k < w * d; k++) gs[pos * d + k] += gv * f[k];
                        }
                }
                if (fv.tracked()) {
                    auto& gf = fv.grad();
                    const T* sd = sv.data();
                    for (std::size_t ch = 0; ch < c; ch++)
                        for (std::size_t pos = 0; pos < p; pos++) {
                            const T gv = g[ch * p + pos];
                            const T* s = sd + pos * d;
                            for (std::size_t k = 0; k < w * d; k++) gf[ch * w * d + k] += gv * s[k];
                        }
                }
            });
        }
        return out;
    }

    // softmax over unmasked positions; masked positions get exactly 0
    Tensor<T> masked_softmax(const Tensor<T>& logits, const std::vector<bool>& mask) {
        if (logits.rank() != 1 || logits.dim(0) != mask.size())
            throw std::invalid_argument("masked_softmax: logits " + shape_str(logits.shape()) + " vs mask of " +
                                        std::to_string(mask.size()));
        const std::size_t n = mask.size();
        bool any = false;
        double mx = 0.0;
        for (std::size_t i = 0; i < n; i++)
            if (mask[i]) {
                const double v = double(logits.data()[i]);
                mx = any ? std::max(mx, v) : v;
                any = true;
            }
        if (!any) throw std::invalid_argument("masked_softmax: all positions masked");
        Tensor<T> out(Shape{n});
        double denom = 0.0;
        for (std::size_t i = 0; i < n; i++)
            if (mask[i]) denom += std::exp(double(logits.data()[i]) - mx);
        for (std::size_t i = 0; i < n; i++)
            out.data()[i] = mask[i] ? T(std::exp(double(logits.data()[i]) - mx) / denom) : T(0);
        if (track({&logits})) {
            Tensor<T> lv = logits;
            std::vector<bool> mv = mask;
            record(out, [lv, out, mv]() mutable {
                const auto& g = out.grad();
                auto& gl = lv.grad();
                const T* y = out.data();
                double dotgy = 0.0;
                for (std::size_t i = 0; i < mv.size(); i++)
                    if (mv[i]) dotgy += double(g[i]) * double(y[i]);
                for (std::size_t i = 0; i < mv.size(); i++)
                    if (mv[i]) gl[i] += y[i] * (g[i] - T(dotgy));
            });
        }
        return out;
    }

    // k row vectors of dim d -> (k x d)
    Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
        if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
        const std::size_t d = rows[0].numel();
        for (const auto& r : rows)
            if (r.rank() != 1 || r.dim(0) != d) shape_error("stack_rows", rows[0].shape(), r.shape());
        Tensor<T> out(Shape{rows.size(), d});
        for (std::size_t i = 0; i < rows.size(); i++) std::copy(rows[i].data(), rows[i].data() + d, out.data() + i * d);
        bool any = false;
        if (grad_enabled_)
            for (const auto& r : rows)
                if (r.tracked()) any = true;
        if (any) {
            std::vector<Tensor<T>> held = rows;
            record(out, [held, out, d]() mutable {
                const auto& g = out.grad();
                for (std::size_t i = 0; i < held.size(); i++)
                    if (held[i].tracked()) {
                        auto& gr = held[i].grad();
                        for (std::size_t j = 0; j < d; j++) gr[j] += g[i * d + j];
                    }
            });
        }
        return out;
    }

    // weights (k) over rows (k x d) -> (d)
    Tensor<T> weighted_sum(const Tensor<T>& rows, const Tensor<T>& weights) {
        if (rows.rank() != 2 || weights.rank() != 1 || rows.dim(0) != weights.dim(0))
            shape_error("weighted_sum", rows.shape(), weights.shape());
        const std::size_t k = rows.dim(0), d = rows.dim(1);
        Tensor<T> out(Shape{d});
        for (std::size_t j = 0; j < d; j++) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; i++) acc += double(weights.data()[i]) * double(rows.data()[i * d + j]);
            out.data()[j] = T(acc);
        }
        if (track({&rows, &weights})) {
            Tensor<T> rv = rows, wv = weights;
            record(out, [rv, wv, out, k, d]() mutable {
                const auto& g = out.grad();
                if (rv.tracked()) {
                    auto& gr = rv.grad();
                    for (std::size_t i = 0; i < k; i++)
                        for (std::size_t j = 0; j < d; j++) gr[i * d + j] += wv.data()[i] * g[j];
                }
                if (wv.tracked()) {
                    auto& gw = wv.grad();
                    for (std::size_t i = 0; i < k; i++) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; j++) acc += double(g[j]) * double(rv.data()[i * d + j]);
                        gw[i] += T(acc);
                    }
                }
            });
        }
        return out;
    }

    // single row of (V x d) as a rank-1 vector
    Tensor<T> gather_row(const Tensor<T>& table, std::size_t id) {
        if (table.rank() != 2) throw std::invalid_argument("gather_row: table must be rank-2, got " + shape_str(table.shape()));
        const std::size_t v = table.dim(0), d = table.dim(1);
        if (id >= v) throw std::out_of_range("gather_row: row " + std::to_string(id) + " out of range " + std::to_string(v));
        Tensor<T> out(Shape{d});
        std::copy(table.data() + id * d, table.data() + (id + 1) * d, out.data());
        if (track({&table})) {
            Tensor<T> tv = table;
            record(out, [tv, out, id, d]() mutable {
                const auto& g = out.grad();
                auto& gt = tv.grad();
                for (std::size_t j = 0; j < d; j++) gt[id * d + j] += g[j];
            });
        }
        return out;
    }

    // right-pads (n x d) with zero rows up to min_rows; identity when n >= min_rows
    Tensor<T> pad_rows(const Tensor<T>& x, std::size_t min_rows) {
        if (x.rank() != 2) throw std::invalid_argument("pad_rows: expected rank-2, got " + shape_str(x.shape()));
        const std::size_t n = x.dim(0), d = x.dim(1);
        if (n >= min_rows) return x;
        Tensor<T> out(Shape{min_rows, d});
        std::copy(x.data(), x.data() + n * d, out.data());
        if (track({&x})) {
            Tensor<T> xv = x;
            record(out, [xv, out, n, d]() mutable {
                const auto& g = out.grad();
                auto& gx = xv.grad();
                for (std::size_t i = 0; i < n * d; i++) gx[i] += g[i];
            });
        }
        return out;
    }

    Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.rank() != 1 || a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
        double acc = 0.0;
        for (std::size_t i = 0; i < a.numel(); i++) acc += double(a.data()[i]) * double(b.data()[i]);
        Tensor<T> out = Tensor<T>::scalar(T(acc));
        if (track({&a, &b})) {
            Tensor<T> av = a, bv = b;
            record(out, [av, bv, out]() mutable {
                const T g = out.grad()[0];
                if (av.tracked()) {
                    auto& ga = av.grad();
                    for (std::size_t i = 0; i < ga.size(); i++) ga[i] += g * bv.data()[i];
                }
                if (bv.tracked()) {
                    auto& gb = bv.grad();
                    for (std::size_t i = 0; i < gb.size(); i++) gb[i] += g * av.data()[i];
                }
            });
        }
        return out;
    }

    // mean binary cross-entropy over the label axis; probabilities are
    // clamped to [eps, 1-eps] before the logs
    Tensor<T> bce_loss(const Tensor<T>& output, const std::vector<T>& target) {
        if (output.rank() != 1 || output.dim(0) != target.size())
            throw std::invalid_argument("bce_loss: output " + shape_str(output.shape()) + " vs target of " +
                                        std::to_string(target.size()));
        for (T t : target)
            if (t != T(0) && t != T(1)) throw std::invalid_argument("bce_loss: target values must be 0 or 1");
        const std::size_t n = target.size();
        const double eps = kProbEps;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; i++) {
            const double o = std::min(std::max(double(output.data()[i]), eps), 1.0 - eps);
            acc -= double(target[i]) * std::log(o) + (1.0 - double(target[i])) * std::log(1.0 - o);
        }
        Tensor<T> out = Tensor<T>::scalar(T(acc / double(n)));
        if (track({&output})) {
            Tensor<T> ov = output;
            std::vector<T> tv = target;
            record(out, [ov, out, tv, n, eps]() mutable {
                const T g = out.grad()[0];
                auto& go = ov.grad();
                for (std::size_t i = 0; i < n; i++) {
                    const double raw = double(ov.data()[i]);
                    if (raw < eps || raw > 1.0 - eps) continue;  // clamp region: zero slope
                    const double d = (-double(tv[i]) / raw + (1.0 - double(tv[i])) / (1.0 - raw)) / double(n);
                    go[i] += g * T(d);
                }
            });
        }
        return out;
    }

    // categorical cross-entropy over per-label 2-way distributions,
    // averaged over labels; rows must be normalized within 1e-6
    Tensor<T> cce_loss(const Tensor<T>& output, const std::vector<std::size_t>& target_class) {
        if (output.rank() != 2 || output.dim(0) != target_class.size())
            throw std::invalid_argument("cce_loss: output " + shape_str(output.shape()) + " vs target of " +
                                        std::to_string(target_class.size()));
        const std::size_t L = output.dim(0), k = output.dim(1);
        for (std::size_t l = 0; l < L; l++) {
            double s = 0.0;
            for (std::size_t x = 0; x < k; x++) s += double(output.data()[l * k + x]);
            if (std::abs(s - 1.0) > 1e-6)
                throw std::invalid_argument("cce_loss: row " + std::to_string(l) + " sums to " + std::to_string(s));
            if (target_class[l] >= k) throw std::invalid_argument("cce_loss: target class out of range");
        }
        const double eps = kProbEps;
        double acc = 0.0;
        for (std::size_t l = 0; l < L; l++) {
            const double o = std::min(std::max(double(output.data()[l * k + target_class[l]]), eps), 1.0 - eps);
            acc -= std::log(o);
        }
        Tensor<T> out = Tensor<T>::scalar(T(acc / double(L)));
        if (track({&output})) {
            Tensor<T> ov = output;
            std::vector<std::size_t> tc = target_class;
            record(out, [ov, out, tc, L, k, eps]() mutable {
                const T g = out.grad()[0];
                auto& go = ov.grad();
                for (std::size_t l = 0; l < L; l++) {
                    const double raw = double(ov.data()[l * k + tc[l]]);
                    if (raw < eps || raw > 1.0 - eps) continue;
                    go[l * k + tc[l]] += g * T(-1.0 / raw / double(L));
                }
            });
        }
        return out;
    }

    // Populates grads of every tracked tensor reachable from loss.
    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (used_) throw std::logic_error("backward: tape already consumed; reset() first");
        used_ = true;
        if (!loss.tracked()) return;  // nothing recorded depends on it
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }
};

}  // namespace xmlt
