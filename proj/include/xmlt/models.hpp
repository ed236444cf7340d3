// The four classifiers: CBOW, CNN and HA-GRU over the tensor stack, and a
// linear one-vs-all over tf-idf features trained with Pegasos-style SGD.
#pragma once

#include <atomic>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xmlt/corpus.hpp"
#include "xmlt/layers.hpp"
#include "xmlt/stopwords.hpp"
#include "xmlt/tensor.hpp"
#include "xmlt/textprep.hpp"

namespace xmlt {

template <typename T>
std::vector<T> targets_from_bits(const std::vector<std::uint8_t>& bits) {
    std::vector<T> t(bits.size());
    for (std::size_t i = 0; i < bits.size(); i++) t[i] = bits[i] ? T(1) : T(0);
    return t;
}

// Labels whose probability strictly exceeds the threshold.
template <typename T>
std::vector<std::size_t> predict_indices(const std::vector<T>& probs, double threshold) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < probs.size(); i++)
        if (double(probs[i]) > threshold) out.push_back(i);
    return out;
}

template <typename T>
std::set<std::string> predict_codes(const std::vector<T>& probs, double threshold, const LabelSpace& space) {
    std::set<std::string> out;
    for (auto idx : predict_indices(probs, threshold)) out.insert(space.code_of(idx));
    return out;
}

// ---------------------------------------------------------------------------
// CBOW: mean of word embeddings -> dense -> sigmoid

template <typename T>
struct CbowModel {
    static constexpr const char* kind = "cbow";
    using value_type = T;

    EmbeddingLayer<T> emb;
    DenseLayer<T> out;

    CbowModel() = default;
    CbowModel(std::size_t vocab, std::size_t n_emb, std::size_t labels, std::mt19937& rng)
        : emb(vocab, n_emb, rng), out(labels, n_emb, rng) {}

    std::size_t n_labels() const { return out.W.dim(0); }

    Tensor<T> forward(Tape<T>& tape, const std::vector<std::size_t>& flat_ids) const {
        if (flat_ids.empty()) throw std::invalid_argument("cbow: empty document");
        Tensor<T> averaged = tape.mean(emb.lookup(tape, flat_ids));
        return tape.sigmoid(out.forward(tape, averaged));
    }

    Tensor<T> doc_loss(Tape<T>& tape, const PreprocessedDoc& doc, const std::vector<std::uint8_t>& gold_bits) const {
        return tape.bce_loss(forward(tape, doc.flat()), targets_from_bits<T>(gold_bits));
    }

    std::vector<T> doc_probs(const PreprocessedDoc& doc) const {
        Tape<T> tape(false);
        return forward(tape, doc.flat()).values();
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
        return {{"cbow.emb.E", &emb.table}, {"cbow.out.W", &out.W}, {"cbow.out.b", &out.b}};
    }
    void post_backward() { emb.clear_pad_grad(); }

    nlohmann::json dims() const {
        return {{"vocab", emb.vocab_size()}, {"n_emb", emb.dim()}, {"labels", n_labels()}};
    }
    static CbowModel from_dims(const nlohmann::json& d) {
        std::mt19937 rng(0);
        return CbowModel(d.at("vocab").get<std::size_t>(), d.at("n_emb").get<std::size_t>(),
                         d.at("labels").get<std::size_t>(), rng);
    }
};

// ---------------------------------------------------------------------------
// CNN: embeddings -> 1-d conv (300 channels, width 3) -> global max pool ->
// dense -> sigmoid. The winning window per channel is kept for explanation.

template <typename T>
struct CnnModel {
    static constexpr const char* kind = "cnn";
    using value_type = T;

    EmbeddingLayer<T> emb;
    ConvBlock<T> conv;
    DenseLayer<T> out;

    CnnModel() = default;
    CnnModel(std::size_t vocab, std::size_t n_emb, std::size_t channels, std::size_t width, std::size_t labels,
             std::mt19937& rng)
        : emb(vocab, n_emb, rng), conv(channels, width, n_emb, rng), out(labels, channels, rng) {}

    std::size_t n_labels() const { return out.W.dim(0); }

    struct Forward {
        Tensor<T> probs;
        Tensor<T> pooled;
        std::vector<std::size_t> argmax;      // winning window per channel
        std::vector<std::size_t> padded_ids;  // ids actually convolved (>= width)
    };

    Forward forward(Tape<T>& tape, const std::vector<std::size_t>& flat_ids) const {
        if (flat_ids.empty()) throw std::invalid_argument("cnn: empty document");
        std::vector<std::size_t> ids = flat_ids;
        while (ids.size() < conv.width()) ids.push_back(kPadId);
        auto pooled = conv.forward(tape, emb.lookup(tape, ids));
        Tensor<T> probs = tape.sigmoid(out.forward(tape, pooled.values));
        return {probs, pooled.values, std::move(pooled.argmax), std::move(ids)};
    }

    Tensor<T> doc_loss(Tape<T>& tape, const PreprocessedDoc& doc, const std::vector<std::uint8_t>& gold_bits) const {
        return tape.bce_loss(forward(tape, doc.flat()).probs, targets_from_bits<T>(gold_bits));
    }

    std::vector<T> doc_probs(const PreprocessedDoc& doc) const {
        Tape<T> tape(false);
        return forward(tape, doc.flat()).probs.values();
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
        return {{"cnn.emb.E", &emb.table}, {"cnn.conv.f", &conv.filters}, {"cnn.out.W", &out.W}, {"cnn.out.b", &out.b}};
    }
    void post_backward() { emb.clear_pad_grad(); }

    nlohmann::json dims() const {
        return {{"vocab", emb.vocab_size()},
                {"n_emb", emb.dim()},
                {"channels", conv.channels()},
                {"width", conv.width()},
                {"labels", n_labels()}};
    }
    static CnnModel from_dims(const nlohmann::json& d) {
        std::mt19937 rng(0);
        return CnnModel(d.at("vocab").get<std::size_t>(), d.at("n_emb").get<std::size_t>(),
                        d.at("channels").get<std::size_t>(), d.at("width").get<std::size_t>(),
                        d.at("labels").get<std::size_t>(), rng);
    }
};

// ---------------------------------------------------------------------------
// HA-GRU: word biGRU + shared word attention encode each sentence; sentence
// biGRU + per-label attention encode the document per label; per-label
// 2-way softmax output.

struct AttentionTrace {
    std::vector<std::vector<double>> sentence_weights;  // per label: (S)
    std::vector<std::vector<double>> word_weights;      // per sentence: (len), shared across labels
    std::vector<std::vector<double>> sentence_outputs;  // per sentence: sentence-GRU output (2h)
    std::vector<SentenceSpan> spans;
};

template <typename T>
struct HagruModel {
    static constexpr const char* kind = "hagru";
    using value_type = T;

    EmbeddingLayer<T> emb;
    GruCell<T> word_fwd, word_bwd;
    AttentionParams<T> word_att;  // shared across labels
    GruCell<T> sent_fwd, sent_bwd;
    std::vector<AttentionParams<T>> label_att;  // one per label
    std::vector<Tensor<T>> pw;                  // per label: (2 x 2h)
    std::vector<Tensor<T>> pb;                  // per label: (2)

    HagruModel() = default;
    HagruModel(std::size_t vocab, std::size_t n_emb, std::size_t h_state, std::size_t labels, std::mt19937& rng)
        : emb(vocab, n_emb, rng),
          word_fwd(h_state, n_emb, rng),
          word_bwd(h_state, n_emb, rng),
          word_att(2 * h_state, rng),
          sent_fwd(h_state, 2 * h_state, rng),
          sent_bwd(h_state, 2 * h_state, rng) {
        label_att.reserve(labels);
        pw.reserve(labels);
        pb.reserve(labels);
        for (std::size_t l = 0; l < labels; l++) {
            label_att.emplace_back(2 * h_state, rng);
            pw.push_back(init::xavier<T>({2, 2 * h_state}, 2 * h_state, 2, rng));
            pw.back().set_tracked(true);
            pb.emplace_back(Shape{2});
            pb.back().set_tracked(true);
        }
    }

    std::size_t n_labels() const { return label_att.size(); }
    std::size_t h_state() const { return word_fwd.hidden(); }

    struct Forward {
        Tensor<T> dist;  // (L x 2); column 1 is the positive class
        AttentionTrace trace;
    };

    Forward forward(Tape<T>& tape, const PreprocessedDoc& doc, bool want_trace = false) const {
        if (doc.empty()) throw std::invalid_argument("hagru: empty document");
        const std::size_t S = doc.sentences.size();
        AttentionTrace trace;
        if (want_trace) {
            trace.word_weights.resize(S);
            trace.sentence_outputs.resize(S);
            trace.spans = doc.spans;
        }

        std::vector<Tensor<T>> enc_sents(S);
        for (std::size_t s = 0; s < S; s++) {
            std::vector<Tensor<T>> words;
            words.reserve(doc.sentences[s].size());
            for (auto id : doc.sentences[s]) words.push_back(tape.gather_row(emb.table, id));
            auto outputs = bigru(tape, words, word_fwd, word_bwd);
            auto att = attend(tape, outputs, word_att);
            enc_sents[s] = att.context;
            if (want_trace)
                for (auto v : att.weights.values()) trace.word_weights[s].push_back(double(v));
        }

        auto sent_outputs = bigru(tape, enc_sents, sent_fwd, sent_bwd);
        if (want_trace)
            for (std::size_t s = 0; s < S; s++)
                for (auto v : sent_outputs[s].values()) trace.sentence_outputs[s].push_back(double(v));

        std::vector<Tensor<T>> dists(n_labels());
        if (want_trace) trace.sentence_weights.resize(n_labels());
        const std::vector<bool> all(2, true);
        for (std::size_t l = 0; l < n_labels(); l++) {
            auto att = attend(tape, sent_outputs, label_att[l]);
            Tensor<T> logits = tape.add(tape.matmul(pw[l], att.context), pb[l]);
            dists[l] = tape.masked_softmax(logits, all);
            if (want_trace)
                for (auto v : att.weights.values()) trace.sentence_weights[l].push_back(double(v));
        }
        return {tape.stack_rows(dists), std::move(trace)};
    }

    Tensor<T> doc_loss(Tape<T>& tape, const PreprocessedDoc& doc, const std::vector<std::uint8_t>& gold_bits) const {
        std::vector<std::size_t> target_class(gold_bits.size());
        for (std::size_t l = 0; l < gold_bits.size(); l++) target_class[l] = gold_bits[l] ? 1 : 0;
        return tape.cce_loss(forward(tape, doc).dist, target_class);
    }

    std::vector<T> doc_probs(const PreprocessedDoc& doc) const {
        Tape<T> tape(false);
        Tensor<T> dist = forward(tape, doc).dist;
        std::vector<T> probs(n_labels());
        for (std::size_t l = 0; l < n_labels(); l++) probs[l] = dist.values()[l * 2 + 1];
        return probs;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<T>*>> p;
        p.emplace_back("hagru.emb.E", &emb.table);
        auto gru = [&](const std::string& prefix, GruCell<T>& c) {
            p.emplace_back(prefix + ".update.W", &c.Wz);
            p.emplace_back(prefix + ".update.U", &c.Uz);
            p.emplace_back(prefix + ".update.b", &c.bz);
            p.emplace_back(prefix + ".reset.W", &c.Wr);
            p.emplace_back(prefix + ".reset.U", &c.Ur);
            p.emplace_back(prefix + ".reset.b", &c.br);
            p.emplace_back(prefix + ".cand.W", &c.Wh);
            p.emplace_back(prefix + ".cand.U", &c.Uh);
            p.emplace_back(prefix + ".cand.b", &c.bh);
        };
        gru("hagru.word_gru.fwd", word_fwd);
        gru("hagru.word_gru.bwd", word_bwd);
        p.emplace_back("hagru.word_att.w", &word_att.w);
        p.emplace_back("hagru.word_att.v", &word_att.v);
        gru("hagru.sent_gru.fwd", sent_fwd);
        gru("hagru.sent_gru.bwd", sent_bwd);
        for (std::size_t l = 0; l < n_labels(); l++) {
            const std::string base = "hagru.label." + std::to_string(l);
            p.emplace_back(base + ".att.w", &label_att[l].w);
            p.emplace_back(base + ".att.v", &label_att[l].v);
            p.emplace_back(base + ".pw", &pw[l]);
            p.emplace_back(base + ".pb", &pb[l]);
        }
        return p;
    }
    void post_backward() { emb.clear_pad_grad(); }

    nlohmann::json dims() const {
        return {{"vocab", emb.vocab_size()}, {"n_emb", emb.dim()}, {"h_state", h_state()}, {"labels", n_labels()}};
    }
    static HagruModel from_dims(const nlohmann::json& d) {
        std::mt19937 rng(0);
        return HagruModel(d.at("vocab").get<std::size_t>(), d.at("n_emb").get<std::size_t>(),
                          d.at("h_state").get<std::size_t>(), d.at("labels").get<std::size_t>(), rng);
    }
};

// ---------------------------------------------------------------------------
// tf-idf features and the linear one-vs-all model

struct TfidfTable {
    std::vector<float> idf;  // per token id
    std::size_t n_docs = 0;
};

// idf(t) = ln((1+N)/(1+df(t))) + 1, computed over the training encodings
inline TfidfTable build_idf(const std::vector<const PreprocessedDoc*>& docs, std::size_t vocab_size) {
    TfidfTable table;
    table.n_docs = docs.size();
    std::vector<std::size_t> df(vocab_size, 0);
    std::vector<std::size_t> last(vocab_size, SIZE_MAX);
    for (std::size_t i = 0; i < docs.size(); i++)
        for (const auto& sent : docs[i]->sentences)
            for (auto id : sent)
                if (last[id] != i) {
                    last[id] = i;
                    df[id]++;
                }
    table.idf.resize(vocab_size);
    for (std::size_t t = 0; t < vocab_size; t++)
        table.idf[t] = float(std::log((1.0 + double(table.n_docs)) / (1.0 + double(df[t]))) + 1.0);
    return table;
}

using SparseVec = std::vector<std::pair<std::size_t, double>>;  // sorted by id

// L2-normalized tf*idf entries for non-stop-word tokens
inline SparseVec tfidf_vector(const std::vector<std::size_t>& flat_ids, const TfidfTable& table,
                              const std::vector<std::uint8_t>& stop_mask) {
    std::map<std::size_t, std::size_t> tf;
    for (auto id : flat_ids) {
        if (id < stop_mask.size() && stop_mask[id]) continue;
        tf[id]++;
    }
    SparseVec v;
    double norm2 = 0.0;
    for (const auto& [id, c] : tf) {
        const double w = double(c) * double(table.idf.at(id));
        v.emplace_back(id, w);
        norm2 += w * w;
    }
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& [id, w] : v) w *= inv;
    }
    return v;
}

struct LinearOvaConfig {
    double lambda = 1e-4;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
};

// Independent binary hinge-loss classifiers, one per label, over shared
// tf-idf features. Decision is sign(w.x + b) with strict > 0.
class LinearOvaModel {
public:
    static constexpr const char* kind = "linear";

    LinearOvaModel() = default;
    LinearOvaModel(std::size_t n_features, std::size_t n_labels)
        : weights_(n_labels, std::vector<float>(n_features, 0.f)), bias_(n_labels, 0.f) {}

    std::size_t n_labels() const { return weights_.size(); }
    std::size_t n_features() const { return weights_.empty() ? 0 : weights_[0].size(); }

    TfidfTable idf;
    std::vector<std::uint8_t> stop_mask;  // per token id

    std::vector<std::vector<float>>& weights() { return weights_; }
    const std::vector<std::vector<float>>& weights() const { return weights_; }
    std::vector<float>& bias() { return bias_; }
    const std::vector<float>& bias() const { return bias_; }

    double margin(std::size_t label, const SparseVec& x) const {
        double m = double(bias_[label]);
        for (const auto& [id, v] : x) m += double(weights_[label][id]) * v;
        return m;
    }

    std::vector<std::uint8_t> predict_bits(const SparseVec& x) const {
        std::vector<std::uint8_t> bits(n_labels(), 0);
        for (std::size_t l = 0; l < n_labels(); l++) bits[l] = margin(l, x) > 0.0 ? 1 : 0;
        return bits;
    }

private:
    std::vector<std::vector<float>> weights_;
    std::vector<float> bias_;
};

namespace detail {

// Pegasos on J(w) = lambda*||w||^2 + mean hinge; the bias rides along as a
// regularized constant-1 feature, and a scale factor keeps the shrink step
// O(1).
inline void train_one_label(std::vector<float>& w_out, float& b_out, const std::vector<SparseVec>& features,
                            const std::vector<std::int8_t>& y, std::size_t n_features, const LinearOvaConfig& cfg,
                            std::uint64_t label_seed) {
    std::vector<double> w(n_features, 0.0);
    double scale = 1.0, wb = 0.0;
    std::mt19937 rng(static_cast<std::uint32_t>(label_seed));
    std::vector<std::size_t> order(features.size());
    for (std::size_t i = 0; i < order.size(); i++) order[i] = i;
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; epoch++) {
        std::shuffle(order.begin(), order.end(), rng);
        for (auto i : order) {
            t++;
            const double eta = 1.0 / (2.0 * cfg.lambda * double(t));
            double dotwx = wb;
            for (const auto& [id, v] : features[i]) dotwx += w[id] * v;
            const double m = double(y[i]) * scale * dotwx;
            scale *= (1.0 - 1.0 / double(t));
            if (scale < 1e-9) {
                for (auto& x : w) x *= scale;
                wb *= scale;
                scale = 1.0;
            }
            if (m < 1.0) {
                for (const auto& [id, v] : features[i]) w[id] += eta * double(y[i]) * v / scale;
                wb += eta * double(y[i]) / scale;
            }
        }
    }
    for (std::size_t j = 0; j < n_features; j++) w_out[j] = float(w[j] * scale);
    b_out = float(wb * scale);
}

}  // namespace detail

// Labels are independent problems; labels without a positive example keep
// the zero (always-negative) classifier.
inline LinearOvaModel linear_ova_train(const std::vector<const PreprocessedDoc*>& docs,
                                       const std::vector<std::vector<std::uint8_t>>& gold_bits, std::size_t n_labels,
                                       std::size_t vocab_size, const std::vector<std::uint8_t>& stop_mask,
                                       const LinearOvaConfig& cfg) {
    if (docs.empty()) throw std::invalid_argument("linear_ova_train: empty training set");
    LinearOvaModel model(vocab_size, n_labels);
    model.idf = build_idf(docs, vocab_size);
    model.stop_mask = stop_mask;

    std::vector<SparseVec> features(docs.size());
    for (std::size_t i = 0; i < docs.size(); i++) features[i] = tfidf_vector(docs[i]->flat(), model.idf, stop_mask);

    std::vector<std::size_t> positives(n_labels, 0);
    for (const auto& bits : gold_bits)
        for (std::size_t l = 0; l < n_labels; l++) positives[l] += bits[l];

    auto train_label = [&](std::size_t l) {
        if (positives[l] == 0) return;
        std::vector<std::int8_t> y(docs.size());
        for (std::size_t i = 0; i < docs.size(); i++) y[i] = gold_bits[i][l] ? 1 : -1;
        detail::train_one_label(model.weights()[l], model.bias()[l], features, y, vocab_size, cfg,
                                cfg.seed ^ (0x9e3779b97f4a7c15ull * (l + 1)));
    };

    if (cfg.threads <= 1) {
        for (std::size_t l = 0; l < n_labels; l++) train_label(l);
    } else {
        std::vector<std::thread> workers;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < cfg.threads; w++)
            workers.emplace_back([&]() {
                for (std::size_t l = next++; l < n_labels; l = next++) train_label(l);
            });
        for (auto& w : workers) w.join();
    }
    return model;
}

// Stop mask over vocabulary ids from a stop-word string set.
inline std::vector<std::uint8_t> stop_mask_for(const Vocabulary& vocab, const std::set<std::string>& stopwords) {
    std::vector<std::uint8_t> mask(vocab.size(), 0);
    for (std::size_t id = 0; id < vocab.size(); id++)
        if (stopwords.count(vocab.token_of(id))) mask[id] = 1;
    mask[Vocabulary::pad_id] = 1;  // PAD never contributes a feature
    return mask;
}

}  // namespace xmlt
