// Mini-batch training loop (Adam, global-norm clipping, early stopping on
// validation Micro-F) and the binary checkpoint format shared by all models.
#pragma once

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/eval.hpp"
#include "xmlt/models.hpp"

namespace xmlt {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;  // epochs without validation Micro-F gain
    double val_fraction = 0.1;
    double clip_norm = 5.0;
    double threshold = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (lr < 0 || batch_size == 0 || max_epochs == 0 || patience == 0)
            throw std::invalid_argument("train config: lr, batch size, epochs and patience must be positive");
        if (!(val_fraction > 0.0 && val_fraction <= 0.5))
            throw std::invalid_argument("train config: validation fraction must be in (0, 0.5]");
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0;
    double val_micro_f = 0;
    double seconds = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;

    void save_csv(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("history: cannot write " + path);
        f << "epoch,loss,val_micro_f,seconds\n";
        char buf[128];
        for (const auto& e : epochs) {
            std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.3f\n", e.epoch, e.loss, e.val_micro_f, e.seconds);
            f << buf;
        }
    }
};

template <typename T>
class Adam {
public:
    Adam(const std::vector<Tensor<T>*>& params, const TrainConfig& cfg) : cfg_(cfg) {
        for (auto* p : params) {
            m_.emplace_back(p->numel(), T(0));
            v_.emplace_back(p->numel(), T(0));
        }
    }

    void step(const std::vector<Tensor<T>*>& params) {
        t_++;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); i++) {
            auto& val = params[i]->values();
            const auto& g = params[i]->grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); j++) {
                const double gj = double(g[j]);
                const double mj = cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                val[j] = T(double(val[j]) - cfg_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.adam_eps));
            }
        }
    }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <typename T>
void clip_global_norm(const std::vector<Tensor<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (T g : p->grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto* p : params)
        for (auto& g : p->grad()) g = T(double(g) * scale);
}

template <typename Model>
std::vector<std::vector<std::uint8_t>> predict_bits(const Model& model,
                                                    const std::vector<const PreprocessedDoc*>& docs, double threshold) {
    std::vector<std::vector<std::uint8_t>> out;
    out.reserve(docs.size());
    for (const auto* doc : docs) {
        std::vector<std::uint8_t> bits(model.n_labels(), 0);
        if (!doc->empty()) {
            auto probs = model.doc_probs(*doc);
            for (std::size_t l = 0; l < probs.size(); l++) bits[l] = double(probs[l]) > threshold ? 1 : 0;
        }
        out.push_back(std::move(bits));
    }
    return out;
}

// Shuffles per epoch under the seed, accumulates gradients over each batch
// (batch loss is the mean of per-document losses), Adam-updates with
// global-norm clipping, and keeps the best-validation parameters.
template <typename Model, typename T = typename Model::value_type>
TrainHistory train_model(Model& model, const std::vector<const PreprocessedDoc*>& docs,
                         const std::vector<std::vector<std::uint8_t>>& gold_bits, const TrainConfig& cfg) {
    cfg.validate();
    if (docs.empty()) throw std::invalid_argument("train: empty training set");
    if (docs.size() != gold_bits.size()) throw std::invalid_argument("train: docs and targets misaligned");
    for (const auto* d : docs)
        if (d->empty()) throw std::invalid_argument("train: empty document reached the training loop");

    std::vector<Tensor<T>*> params;
    for (auto& [name, t] : model.named_params()) params.push_back(t);
    Adam<T> adam(params, cfg);

    std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));
    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); i++) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t n_val = std::size_t(std::llround(cfg.val_fraction * double(docs.size())));
    n_val = std::min(std::max<std::size_t>(docs.size() >= 2 ? 1 : 0, n_val), docs.size() - 1);
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
    if (val_idx.empty()) val_idx = train_idx;  // degenerate single-record set

    std::vector<const PreprocessedDoc*> val_docs;
    std::vector<std::vector<std::uint8_t>> val_gold;
    for (auto i : val_idx) {
        val_docs.push_back(docs[i]);
        val_gold.push_back(gold_bits[i]);
    }

    TrainHistory history;
    double best_f = -1.0;
    std::vector<std::vector<T>> best_params;
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; epoch++) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, train_idx.size());
            const T inv_batch = T(1.0 / double(end - start));
            for (std::size_t k = start; k < end; k++) {
                Tape<T> tape;
                Tensor<T> loss = model.doc_loss(tape, *docs[train_idx[k]], gold_bits[train_idx[k]]);
                const double lv = double(loss.item());
                if (!std::isfinite(lv))
                    throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                                             ", document " + std::to_string(train_idx[k]));
                loss_sum += lv;
                Tensor<T> scaled = tape.affine(loss, inv_batch, T(0));
                tape.backward(scaled);
            }
            model.post_backward();
            clip_global_norm(params, cfg.clip_norm);
            adam.step(params);
            for (auto* p : params) p->zero_grad();
        }

        auto val_pred = predict_bits(model, val_docs, cfg.threshold);
        const double val_f = micro_f_bits(val_pred, val_gold).f1;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back({epoch, loss_sum / double(train_idx.size()), val_f, secs});

        if (val_f > best_f) {
            best_f = val_f;
            best_params.clear();
            for (auto* p : params) best_params.push_back(p->values());
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); i++) params[i]->values() = best_params[i];
    return history;
}

// ---------------------------------------------------------------------------
// checkpoint format: magic "XMLT", version u32, then per parameter:
// name length (u64) + name bytes, rank (u64), dims (u64 each), f32 data,
// all little-endian

namespace ckpt {

constexpr std::uint32_t version = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; i++) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f32(std::ostream& os, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}
inline float get_f32(std::istream& is) {
    const std::uint32_t u = get_u32(is);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

struct Entry {
    std::string name;
    Shape dims;
    std::vector<float> data;
};

inline void write_entries(const std::string& path, const std::vector<Entry>& entries) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write("XMLT", 4);
    put_u32(f, version);
    for (const auto& e : entries) {
        put_u64(f, e.name.size());
        f.write(e.name.data(), std::streamsize(e.name.size()));
        put_u64(f, e.dims.size());
        std::uint64_t numel = 1;
        for (auto d : e.dims) {
            put_u64(f, d);
            numel *= d;
        }
        if (numel != e.data.size()) throw std::logic_error("checkpoint: entry '" + e.name + "' dims/data mismatch");
        for (float v : e.data) put_f32(f, v);
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::vector<Entry> read_entries(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "XMLT", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t ver = get_u32(f);
    if (ver != version)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver) + " in " + path);
    std::vector<Entry> out;
    for (;;) {
        f.peek();
        if (f.eof()) break;
        Entry e;
        const std::uint64_t nlen = get_u64(f);
        e.name.resize(nlen);
        if (!f.read(e.name.data(), std::streamsize(nlen))) throw std::runtime_error("checkpoint: truncated file");
        const std::uint64_t rank = get_u64(f);
        std::uint64_t numel = 1;
        for (std::uint64_t i = 0; i < rank; i++) {
            e.dims.push_back(get_u64(f));
            numel *= e.dims.back();
        }
        e.data.reserve(numel);
        for (std::uint64_t i = 0; i < numel; i++) e.data.push_back(get_f32(f));
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace ckpt

struct CheckpointMeta {
    std::string model_kind;
    nlohmann::json dims;
    std::vector<std::string> labels;
    std::vector<std::uint64_t> label_freqs;
    std::uint64_t vocab_hash = 0;
    double threshold = 0.5;
    LabelSetting setting = LabelSetting::full;

    nlohmann::json to_json() const {
        char hash_hex[32];
        std::snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(vocab_hash));
        return {{"model", model_kind},      {"dims", dims},           {"labels", labels},
                {"label_freqs", label_freqs}, {"vocab_hash", hash_hex}, {"threshold", threshold},
                {"setting", to_string(setting)}};
    }
    static CheckpointMeta from_json(const nlohmann::json& j) {
        CheckpointMeta m;
        m.model_kind = j.at("model").get<std::string>();
        m.dims = j.at("dims");
        m.labels = j.at("labels").get<std::vector<std::string>>();
        m.label_freqs = j.at("label_freqs").get<std::vector<std::uint64_t>>();
        m.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(), nullptr, 16);
        m.threshold = j.at("threshold").get<double>();
        m.setting = label_setting_from(j.at("setting").get<std::string>());
        return m;
    }

    LabelSpace label_space() const { return LabelSpace::from_codes(labels, label_freqs); }
};

inline std::string sidecar_path(const std::string& checkpoint_path) { return checkpoint_path + ".json"; }

inline void write_sidecar(const std::string& checkpoint_path, const CheckpointMeta& meta) {
    std::ofstream f(sidecar_path(checkpoint_path), std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + sidecar_path(checkpoint_path));
    f << meta.to_json().dump(2) << '\n';
}

inline CheckpointMeta read_sidecar(const std::string& checkpoint_path) {
    std::ifstream f(sidecar_path(checkpoint_path), std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + sidecar_path(checkpoint_path));
    nlohmann::json j;
    f >> j;
    return CheckpointMeta::from_json(j);
}

template <typename Model>
void save_checkpoint(Model& model, const CheckpointMeta& meta_in, const std::string& path) {
    CheckpointMeta meta = meta_in;
    meta.model_kind = Model::kind;
    meta.dims = model.dims();
    std::vector<ckpt::Entry> entries;
    for (auto& [name, t] : model.named_params()) {
        ckpt::Entry e;
        e.name = name;
        e.dims = t->shape();
        e.data.reserve(t->numel());
        for (auto v : t->values()) e.data.push_back(float(v));
        entries.push_back(std::move(e));
    }
    ckpt::write_entries(path, entries);
    write_sidecar(path, meta);
}

// Rebuilds the model from the sidecar dims and fills parameters by name.
// Refuses a checkpoint whose vocabulary hash differs from the vocabulary in
// use.
template <typename Model, typename T = typename Model::value_type>
std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path, const Vocabulary* vocab) {
    CheckpointMeta meta = read_sidecar(path);
    if (meta.model_kind != Model::kind)
        throw std::runtime_error("checkpoint: " + path + " holds a '" + meta.model_kind + "' model, expected '" +
                                 Model::kind + "'");
    if (vocab && vocab->hash() != meta.vocab_hash)
        throw std::runtime_error("checkpoint: vocabulary hash mismatch for " + path +
                                 " (model was trained with a different vocabulary)");
    Model model = Model::from_dims(meta.dims);
    auto entries = ckpt::read_entries(path);
    auto params = model.named_params();
    if (entries.size() != params.size())
        throw std::runtime_error("checkpoint: " + path + " has " + std::to_string(entries.size()) + " parameters, expected " +
                                 std::to_string(params.size()));
    std::size_t i = 0;
    for (auto& [name, t] : params) {
        const auto& e = entries[i++];
        if (e.name != name) throw std::runtime_error("checkpoint: unexpected parameter '" + e.name + "', expected '" + name + "'");
        if (e.dims != t->shape())
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(e.dims) + ", expected " +
                                     shape_str(t->shape()));
        for (std::size_t j = 0; j < e.data.size(); j++) t->values()[j] = T(e.data[j]);
    }
    return {std::move(model), std::move(meta)};
}

// Linear model storage: weights/bias plus the idf table and stop mask it
// was trained with.
inline void save_linear_checkpoint(const LinearOvaModel& model, const CheckpointMeta& meta_in, const std::string& path) {
    CheckpointMeta meta = meta_in;
    meta.model_kind = LinearOvaModel::kind;
    meta.dims = {{"features", model.n_features()}, {"labels", model.n_labels()}};
    std::vector<ckpt::Entry> entries;
    ckpt::Entry w{"linear.W", {model.n_labels(), model.n_features()}, {}};
    for (const auto& row : model.weights()) w.data.insert(w.data.end(), row.begin(), row.end());
    entries.push_back(std::move(w));
    entries.push_back({"linear.b", {model.n_labels()}, model.bias()});
    entries.push_back({"linear.idf", {model.idf.idf.size()}, model.idf.idf});
    ckpt::Entry stop{"linear.stop", {model.stop_mask.size()}, {}};
    for (auto b : model.stop_mask) stop.data.push_back(float(b));
    entries.push_back(std::move(stop));
    ckpt::write_entries(path, entries);
    write_sidecar(path, meta);
}

inline std::pair<LinearOvaModel, CheckpointMeta> load_linear_checkpoint(const std::string& path, const Vocabulary* vocab) {
    CheckpointMeta meta = read_sidecar(path);
    if (meta.model_kind != LinearOvaModel::kind)
        throw std::runtime_error("checkpoint: " + path + " holds a '" + meta.model_kind + "' model, expected 'linear'");
    if (vocab && vocab->hash() != meta.vocab_hash)
        throw std::runtime_error("checkpoint: vocabulary hash mismatch for " + path +
                                 " (model was trained with a different vocabulary)");
    auto entries = ckpt::read_entries(path);
    if (entries.size() != 4 || entries[0].name != "linear.W" || entries[1].name != "linear.b" ||
        entries[2].name != "linear.idf" || entries[3].name != "linear.stop")
        throw std::runtime_error("checkpoint: unexpected layout in " + path);
    const std::size_t L = meta.dims.at("labels").get<std::size_t>();
    const std::size_t V = meta.dims.at("features").get<std::size_t>();
    if (entries[0].dims != Shape{L, V} || entries[1].dims != Shape{L} || entries[2].dims != Shape{V})
        throw std::runtime_error("checkpoint: parameter shapes do not match sidecar dims in " + path);
    LinearOvaModel model(V, L);
    for (std::size_t l = 0; l < L; l++)
        std::copy(entries[0].data.begin() + long(l * V), entries[0].data.begin() + long((l + 1) * V),
                  model.weights()[l].begin());
    model.bias() = entries[1].data;
    model.idf.idf = entries[2].data;
    model.stop_mask.assign(entries[3].data.size(), 0);
    for (std::size_t i = 0; i < entries[3].data.size(); i++) model.stop_mask[i] = entries[3].data[i] != 0.f;
    return {std::move(model), std::move(meta)};
}

}  // namespace xmlt
