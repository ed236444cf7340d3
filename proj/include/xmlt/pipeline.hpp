// End-to-end wiring used by the CLI: raw JSONL in, trained checkpoints,
// evaluation reports and explanation files out. Instantiated with float
// storage.
#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/corpus.hpp"
#include "xmlt/eval.hpp"
#include "xmlt/explain.hpp"
#include "xmlt/models.hpp"
#include "xmlt/stopwords.hpp"
#include "xmlt/textprep.hpp"
#include "xmlt/train.hpp"

namespace xmlt {

using real = float;

struct PipelineConfig {
    std::string model_kind = "hagru";  // linear | cbow | cnn | hagru
    LabelSetting setting = LabelSetting::full;
    std::size_t min_count = 5;
    std::size_t edit_radius = 3;
    std::size_t n_emb = 100;
    std::size_t h_state = 64;
    std::size_t channels = 300;
    std::size_t conv_width = 3;
    std::size_t bin_size = 50;
    std::size_t max_doc_tokens = 0;  // 0: never truncate
    std::size_t threads = 1;
    TrainConfig train;
    LinearOvaConfig linear;
    SynthConfig synth;
    std::string stopwords_file;  // empty: built-in list
    std::string abbrev_file;     // empty: built-in list

    std::set<std::string> stopwords() const {
        return stopwords_file.empty() ? default_stopwords() : load_stopwords(stopwords_file);
    }
    std::set<std::string> abbreviations() const {
        return abbrev_file.empty() ? default_abbreviations() : load_abbreviations(abbrev_file);
    }

    nlohmann::json to_json() const {
        return {{"model", model_kind},
                {"labels", to_string(setting)},
                {"min_count", min_count},
                {"edit_radius", edit_radius},
                {"n_emb", n_emb},
                {"h_state", h_state},
                {"channels", channels},
                {"conv_width", conv_width},
                {"bin_size", bin_size},
                {"max_doc_tokens", max_doc_tokens},
                {"threads", threads},
                {"stopwords_file", stopwords_file},
                {"abbrev_file", abbrev_file},
                {"train",
                 {{"lr", train.lr},
                  {"batch_size", train.batch_size},
                  {"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"val_fraction", train.val_fraction},
                  {"clip_norm", train.clip_norm},
                  {"threshold", train.threshold},
                  {"seed", train.seed}}},
                {"linear", {{"lambda", linear.lambda}, {"epochs", linear.epochs}, {"seed", linear.seed}}},
                {"synth",
                 {{"labels", synth.labels},
                  {"triggers_per_label", synth.triggers_per_label},
                  {"noise_vocab", synth.noise_vocab},
                  {"docs", synth.docs},
                  {"mean_labels_per_doc", synth.mean_labels_per_doc},
                  {"zipf_exponent", synth.zipf_exponent},
                  {"negation_mode", synth.negation_mode},
                  {"seed", synth.seed}}}};
    }

    static PipelineConfig from_json(const nlohmann::json& j) {
        PipelineConfig c;
        auto get = [&](const char* key, auto& dst) {
            if (j.contains(key)) dst = j.at(key).template get<std::decay_t<decltype(dst)>>();
        };
        get("model", c.model_kind);
        if (j.contains("labels")) c.setting = label_setting_from(j.at("labels").get<std::string>());
        get("min_count", c.min_count);
        get("edit_radius", c.edit_radius);
        get("n_emb", c.n_emb);
        get("h_state", c.h_state);
        get("channels", c.channels);
        get("conv_width", c.conv_width);
        get("bin_size", c.bin_size);
        get("max_doc_tokens", c.max_doc_tokens);
        get("threads", c.threads);
        get("stopwords_file", c.stopwords_file);
        get("abbrev_file", c.abbrev_file);
        if (j.contains("train")) {
            const auto& t = j.at("train");
            auto tget = [&](const char* key, auto& dst) {
                if (t.contains(key)) dst = t.at(key).template get<std::decay_t<decltype(dst)>>();
            };
            tget("lr", c.train.lr);
            tget("batch_size", c.train.batch_size);
            tget("max_epochs", c.train.max_epochs);
            tget("patience", c.train.patience);
            tget("val_fraction", c.train.val_fraction);
            tget("clip_norm", c.train.clip_norm);
            tget("threshold", c.train.threshold);
            tget("seed", c.train.seed);
        }
        if (j.contains("linear")) {
            const auto& t = j.at("linear");
            if (t.contains("lambda")) c.linear.lambda = t.at("lambda").get<double>();
            if (t.contains("epochs")) c.linear.epochs = t.at("epochs").get<std::size_t>();
            if (t.contains("seed")) c.linear.seed = t.at("seed").get<std::uint64_t>();
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            auto sget = [&](const char* key, auto& dst) {
                if (s.contains(key)) dst = s.at(key).template get<std::decay_t<decltype(dst)>>();
            };
            sget("labels", c.synth.labels);
            sget("triggers_per_label", c.synth.triggers_per_label);
            sget("noise_vocab", c.synth.noise_vocab);
            sget("docs", c.synth.docs);
            sget("mean_labels_per_doc", c.synth.mean_labels_per_doc);
            sget("zipf_exponent", c.synth.zipf_exponent);
            sget("negation_mode", c.synth.negation_mode);
            sget("seed", c.synth.seed);
        }
        return c;
    }
};

struct PreparedTraining {
    Dataset dataset;  // rolled up when the setting asks for it
    Vocabulary vocab;
    LabelSpace space;
    PreprocessedDataset pre;
    std::vector<const PreprocessedDoc*> docs;          // usable for training
    std::vector<std::vector<std::uint8_t>> gold_bits;  // aligned with docs
    std::vector<std::string> skipped_empty;            // no sentences after preprocessing
    std::vector<std::string> skipped_unlabeled;        // zero gold labels (rejected for training)
};

inline std::vector<std::vector<std::string>> pseudo_tokenized(const Dataset& ds,
                                                              const std::set<std::string>& abbreviations) {
    std::vector<std::vector<std::string>> out;
    out.reserve(ds.size());
    for (const auto& r : ds.records) {
        std::vector<std::string> toks;
        for (const auto& span : split_sentences(r.text, abbreviations))
            for (const auto& t : tokenize(r.text.substr(span.begin, span.end - span.begin)))
                toks.push_back(map_pseudo(t.text));
        out.push_back(std::move(toks));
    }
    return out;
}

inline PreparedTraining prepare_training(const Dataset& raw, const PipelineConfig& cfg) {
    PreparedTraining prep;
    prep.dataset = cfg.setting == LabelSetting::rolled ? rollup_dataset(raw) : raw;
    const auto abbrev = cfg.abbreviations();
    prep.vocab = Vocabulary::build(pseudo_tokenized(prep.dataset, abbrev), cfg.min_count);
    EditDistanceIndex index(prep.vocab, cfg.edit_radius);
    prep.pre = preprocess_dataset(prep.dataset, prep.vocab, index, abbrev);
    if (cfg.max_doc_tokens > 0)
        for (auto& doc : prep.pre.docs) doc = truncate_doc(doc, cfg.max_doc_tokens);
    prep.space = LabelSpace::from_dataset(prep.dataset);
    for (std::size_t i = 0; i < prep.dataset.size(); i++) {
        const auto& r = prep.dataset.records[i];
        if (prep.pre.docs[i].empty()) {
            prep.skipped_empty.push_back(r.id);
            continue;
        }
        if (r.labels.empty()) {
            prep.skipped_unlabeled.push_back(r.id);
            continue;
        }
        prep.docs.push_back(&prep.pre.docs[i]);
        prep.gold_bits.push_back(prep.space.bits_for(r.labels));
    }
    return prep;
}

inline CheckpointMeta meta_for(const PreparedTraining& prep, const PipelineConfig& cfg) {
    CheckpointMeta meta;
    meta.labels = prep.space.codes();
    meta.label_freqs = prep.space.freqs();
    meta.vocab_hash = prep.vocab.hash();
    meta.threshold = cfg.train.threshold;
    meta.setting = cfg.setting;
    return meta;
}

// Trains the configured model kind and writes model.bin(.json) plus
// history.csv into out_dir.
inline TrainHistory train_and_save(PreparedTraining& prep, const PipelineConfig& cfg, const std::string& out_dir) {
    if (prep.docs.empty()) throw std::runtime_error("train: no usable training records");
    const std::string model_path = out_dir + "/model.bin";
    const CheckpointMeta meta = meta_for(prep, cfg);
    const std::size_t L = prep.space.size();
    TrainHistory history;
    std::mt19937 rng(static_cast<std::uint32_t>(cfg.train.seed));
    if (cfg.model_kind == "cbow") {
        CbowModel<real> model(prep.vocab.size(), cfg.n_emb, L, rng);
        history = train_model(model, prep.docs, prep.gold_bits, cfg.train);
        save_checkpoint(model, meta, model_path);
    } else if (cfg.model_kind == "cnn") {
        CnnModel<real> model(prep.vocab.size(), cfg.n_emb, cfg.channels, cfg.conv_width, L, rng);
        history = train_model(model, prep.docs, prep.gold_bits, cfg.train);
        save_checkpoint(model, meta, model_path);
    } else if (cfg.model_kind == "hagru") {
        HagruModel<real> model(prep.vocab.size(), cfg.n_emb, cfg.h_state, L, rng);
        history = train_model(model, prep.docs, prep.gold_bits, cfg.train);
        save_checkpoint(model, meta, model_path);
    } else if (cfg.model_kind == "linear") {
        LinearOvaConfig lcfg = cfg.linear;
        lcfg.seed = cfg.train.seed;
        lcfg.threads = cfg.threads;
        LinearOvaModel model = linear_ova_train(prep.docs, prep.gold_bits, L, prep.vocab.size(),
                                                stop_mask_for(prep.vocab, cfg.stopwords()), lcfg);
        save_linear_checkpoint(model, meta, model_path);
    } else {
        throw std::invalid_argument("unknown model kind '" + cfg.model_kind + "'");
    }
    history.save_csv(out_dir + "/history.csv");
    return history;
}

struct Predictions {
    std::vector<std::set<std::string>> codes;  // aligned with the dataset
    CheckpointMeta meta;
};

// Loads the checkpoint from out_dir and predicts label sets for every
// record; documents with no usable sentences predict the empty set.
inline Predictions predict_dataset(const std::string& model_path, const std::string& kind, const Vocabulary& vocab,
                                   const PreprocessedDataset& pre) {
    Predictions out;
    auto space_of = [](const CheckpointMeta& m) { return m.label_space(); };
    if (kind == "linear") {
        auto [model, meta] = load_linear_checkpoint(model_path, &vocab);
        const LabelSpace space = space_of(meta);
        for (const auto& doc : pre.docs) {
            std::set<std::string> codes;
            if (!doc.empty()) {
                auto bits = model.predict_bits(tfidf_vector(doc.flat(), model.idf, model.stop_mask));
                for (std::size_t l = 0; l < bits.size(); l++)
                    if (bits[l]) codes.insert(space.code_of(l));
            }
            out.codes.push_back(std::move(codes));
        }
        out.meta = meta;
        return out;
    }
    auto run = [&](auto&& model, const CheckpointMeta& meta) {
        const LabelSpace space = space_of(meta);
        for (const auto& doc : pre.docs) {
            std::set<std::string> codes;
            if (!doc.empty()) codes = predict_codes(model.doc_probs(doc), meta.threshold, space);
            out.codes.push_back(std::move(codes));
        }
        out.meta = meta;
    };
    if (kind == "cbow") {
        auto [model, meta] = load_checkpoint<CbowModel<real>>(model_path, &vocab);
        run(model, meta);
    } else if (kind == "cnn") {
        auto [model, meta] = load_checkpoint<CnnModel<real>>(model_path, &vocab);
        run(model, meta);
    } else if (kind == "hagru") {
        auto [model, meta] = load_checkpoint<HagruModel<real>>(model_path, &vocab);
        run(model, meta);
    } else {
        throw std::invalid_argument("unknown model kind '" + kind + "'");
    }
    return out;
}

// Explanation artifacts for every record; supported for cnn and hagru.
inline void explain_dataset(const std::string& model_path, const std::string& kind, const Vocabulary& vocab,
                            const Dataset& ds, const PreprocessedDataset& pre, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    if (kind == "hagru") {
        auto [model, meta] = load_checkpoint<HagruModel<real>>(model_path, &vocab);
        const LabelSpace space = meta.label_space();
        for (std::size_t i = 0; i < ds.size(); i++) {
            if (pre.docs[i].empty()) continue;
            Tape<real> tape(false);
            auto fwd = model.forward(tape, pre.docs[i], true);
            std::vector<real> probs(model.n_labels());
            for (std::size_t l = 0; l < model.n_labels(); l++) probs[l] = fwd.dist.values()[l * 2 + 1];
            const auto predicted = predict_codes(probs, meta.threshold, space);
            render_report(ds.records[i], pre.docs[i], fwd.trace, predicted, ds.records[i].labels, space, out_dir);
        }
    } else if (kind == "cnn") {
        auto [model, meta] = load_checkpoint<CnnModel<real>>(model_path, &vocab);
        const LabelSpace space = meta.label_space();
        for (std::size_t i = 0; i < ds.size(); i++) {
            if (pre.docs[i].empty()) continue;
            Tape<real> tape(false);
            auto fwd = model.forward(tape, pre.docs[i].flat());
            const auto predicted = predict_codes(fwd.probs.values(), meta.threshold, space);
            render_report(ds.records[i], cnn_triggers(model, fwd, vocab), predicted, ds.records[i].labels, out_dir);
        }
    } else {
        throw std::invalid_argument("explain: supported for 'cnn' and 'hagru', not '" + kind + "'");
    }
}

}  // namespace xmlt
