// Explainability: CNN max-pool n-gram tracing and HA-GRU attention
// extraction, rendered as self-contained HTML + JSON reports.
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/corpus.hpp"
#include "xmlt/models.hpp"

namespace xmlt {

struct NgramTrigger {
    std::size_t channel = 0;
    std::size_t window = 0;
    std::vector<std::string> tokens;  // the filter-width tokens at the window
    double response = 0;              // pooled channel value
};

// One trigger per channel: the window that won the max pool. With a label,
// only channels contributing positively to that label (weight x activation
// > 0) are kept.
template <typename T>
std::vector<NgramTrigger> cnn_triggers(const CnnModel<T>& model, const typename CnnModel<T>::Forward& fwd,
                                       const Vocabulary& vocab, std::optional<std::size_t> label = std::nullopt) {
    if (label && *label >= model.n_labels()) throw std::invalid_argument("cnn_triggers: label index out of range");
    std::vector<NgramTrigger> out;
    const std::size_t width = model.conv.width();
    for (std::size_t c = 0; c < model.conv.channels(); c++) {
        const double activation = double(fwd.pooled.values()[c]);
        if (label) {
            const double w = double(model.out.W.values()[*label * model.conv.channels() + c]);
            if (!(w * activation > 0)) continue;
        }
        NgramTrigger t;
        t.channel = c;
        t.window = fwd.argmax[c];
        t.response = activation;
        for (std::size_t k = 0; k < width; k++) t.tokens.push_back(vocab.token_of(fwd.padded_ids[t.window + k]));
        out.push_back(std::move(t));
    }
    return out;
}

struct ExplainLoc {
    std::size_t sentence = 0;
    std::size_t word = 0;
};

// Highest-attention sentence for the label, then the highest-attention word
// within it (shared word weights); ties break to the lowest index.
inline ExplainLoc hagru_explain(const AttentionTrace& trace, std::size_t label) {
    if (label >= trace.sentence_weights.size()) throw std::invalid_argument("hagru_explain: label index out of range");
    const auto& sw = trace.sentence_weights[label];
    std::size_t best_s = 0;
    for (std::size_t s = 1; s < sw.size(); s++)
        if (sw[s] > sw[best_s]) best_s = s;
    const auto& ww = trace.word_weights.at(best_s);
    std::size_t best_w = 0;
    for (std::size_t w = 1; w < ww.size(); w++)
        if (ww[w] > ww[best_w]) best_w = w;
    return {best_s, best_w};
}

namespace detail {

// linear in the weight, clamped at the 99th percentile so single-spike
// documents stay readable
inline double intensity_scale(const std::vector<double>& weights) {
    if (weights.empty()) return 1.0;
    std::vector<double> sorted = weights;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t idx = std::min(sorted.size() - 1, std::size_t(std::ceil(0.99 * double(sorted.size()))) - 1);
    double p = sorted[idx];
    if (p <= 0) p = 1.0;
    return p;
}

inline std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

// Tokens of each preprocessed sentence, straight from the record text.
inline std::vector<std::vector<std::string>> sentence_tokens(const Record& record, const PreprocessedDoc& doc) {
    std::vector<std::vector<std::string>> out;
    for (const auto& span : doc.spans) {
        std::vector<std::string> toks;
        for (const auto& t : tokenize(record.text.substr(span.begin, span.end - span.begin))) toks.push_back(t.text);
        out.push_back(std::move(toks));
    }
    return out;
}

struct LabelExplanation {
    std::string code;
    bool predicted = false;
    bool gold = false;
    std::vector<double> sentence_weights;
    std::size_t top_sentence = 0;
    std::size_t top_word = 0;
};

inline nlohmann::json explanation_json(const std::string& doc_id, const std::vector<LabelExplanation>& labels,
                                       const std::vector<std::vector<double>>& word_weights) {
    nlohmann::json j;
    j["doc_id"] = doc_id;
    j["labels"] = nlohmann::json::array();
    for (const auto& l : labels)
        j["labels"].push_back({{"code", l.code},
                               {"predicted", l.predicted},
                               {"gold", l.gold},
                               {"sentence_weights", l.sentence_weights},
                               {"top_sentence", l.top_sentence},
                               {"top_word", l.top_word}});
    j["word_weights"] = word_weights;
    return j;
}

// One sentence per line; background intensity follows the label's sentence
// weight, word underline intensity follows the shared word weights. Inline
// styles only, nothing fetched.
inline std::string render_attention_html(const std::string& doc_id, const std::vector<std::vector<std::string>>& sentences,
                                         const std::vector<LabelExplanation>& labels,
                                         const std::vector<std::vector<double>>& word_weights) {
    std::string h;
    h += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + detail::html_escape(doc_id) + "</title></head>\n";
    h += "<body style=\"font-family:monospace;background:#fff;color:#111\">\n";
    h += "<h2>document " + detail::html_escape(doc_id) + "</h2>\n";
    std::vector<double> word_scales(word_weights.size(), 1.0);
    for (std::size_t s = 0; s < word_weights.size(); s++) word_scales[s] = detail::intensity_scale(word_weights[s]);
    for (const auto& lab : labels) {
        h += "<div style=\"margin:12px 0\">\n";
        h += "<h3>label " + detail::html_escape(lab.code) + " [" + (lab.predicted ? "predicted" : "not predicted") + ", " +
             (lab.gold ? "gold" : "not gold") + "]</h3>\n";
        const double sscale = detail::intensity_scale(lab.sentence_weights);
        for (std::size_t s = 0; s < sentences.size(); s++) {
            const double sw = s < lab.sentence_weights.size() ? lab.sentence_weights[s] : 0.0;
            const double si = std::min(sw / sscale, 1.0);
            h += "<div title=\"sentence " + std::to_string(s) + " weight " + detail::fmt(sw) +
                 "\" style=\"background:rgba(255,96,0," + detail::fmt(0.85 * si) + ");padding:1px 4px\">";
            const auto& ww = s < word_weights.size() ? word_weights[s] : std::vector<double>{};
            for (std::size_t w = 0; w < sentences[s].size(); w++) {
                const double wv = w < ww.size() ? ww[w] : 0.0;
                const double wi = std::min(wv / word_scales[s], 1.0);
                if (w) h += " ";
                h += "<span style=\"border-bottom:3px solid rgba(0,64,255," + detail::fmt(wi) + ")\">" +
                     detail::html_escape(sentences[s][w]) + "</span>";
            }
            h += "</div>\n";
        }
        h += "</div>\n";
    }
    h += "</body></html>\n";
    return h;
}

inline std::string render_trigger_html(const std::string& doc_id, const std::vector<NgramTrigger>& triggers,
                                       const std::set<std::string>& predicted, const std::set<std::string>& gold) {
    std::string h;
    h += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + detail::html_escape(doc_id) + "</title></head>\n";
    h += "<body style=\"font-family:monospace;background:#fff;color:#111\">\n";
    h += "<h2>document " + detail::html_escape(doc_id) + "</h2>\n";
    auto codes = [&](const std::set<std::string>& s) {
        std::string out;
        for (const auto& c : s) {
            if (!out.empty()) out += ", ";
            out += detail::html_escape(c);
        }
        return out.empty() ? std::string("(none)") : out;
    };
    h += "<p>predicted: " + codes(predicted) + "</p>\n<p>gold: " + codes(gold) + "</p>\n";
    h += "<table style=\"border-collapse:collapse\">\n<tr><th style=\"text-align:left;padding:2px 8px\">channel</th>"
         "<th style=\"text-align:left;padding:2px 8px\">window</th>"
         "<th style=\"text-align:left;padding:2px 8px\">n-gram</th>"
         "<th style=\"text-align:left;padding:2px 8px\">response</th></tr>\n";
    for (const auto& t : triggers) {
        std::string ngram;
        for (std::size_t i = 0; i < t.tokens.size(); i++) {
            if (i) ngram += " ";
            ngram += t.tokens[i];
        }
        h += "<tr><td style=\"padding:2px 8px\">" + std::to_string(t.channel) + "</td><td style=\"padding:2px 8px\">" +
             std::to_string(t.window) + "</td><td style=\"padding:2px 8px\">" + detail::html_escape(ngram) +
             "</td><td style=\"padding:2px 8px\">" + detail::fmt(t.response) + "</td></tr>\n";
    }
    h += "</table>\n</body></html>\n";
    return h;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("explain: cannot write " + path);
    f << content;
    if (!f) throw std::runtime_error("explain: write failed for " + path);
}

// Attention report for one document: <out_dir>/<doc_id>.html and .json.
// Labels shown are the union of predicted and gold codes, in label-space
// order; a gold label that was never predicted still gets its top sentence.
inline void render_report(const Record& record, const PreprocessedDoc& doc, const AttentionTrace& trace,
                          const std::set<std::string>& predicted, const std::set<std::string>& gold,
                          const LabelSpace& space, const std::string& out_dir) {
    std::vector<LabelExplanation> labels;
    for (std::size_t idx = 0; idx < space.size(); idx++) {
        const std::string& code = space.code_of(idx);
        const bool p = predicted.count(code) > 0, g = gold.count(code) > 0;
        if (!p && !g) continue;
        LabelExplanation le;
        le.code = code;
        le.predicted = p;
        le.gold = g;
        le.sentence_weights = trace.sentence_weights.at(idx);
        const auto loc = hagru_explain(trace, idx);
        le.top_sentence = loc.sentence;
        le.top_word = loc.word;
        labels.push_back(std::move(le));
    }
    const auto sentences = sentence_tokens(record, doc);
    write_file(out_dir + "/" + record.id + ".html",
               render_attention_html(record.id, sentences, labels, trace.word_weights));
    std::ofstream jf(out_dir + "/" + record.id + ".json", std::ios::binary);
    if (!jf) throw std::runtime_error("explain: cannot write json for " + record.id);
    jf << explanation_json(record.id, labels, trace.word_weights).dump(2) << '\n';
}

// Trigger report for one document (CNN).
inline void render_report(const Record& record, const std::vector<NgramTrigger>& triggers,
                          const std::set<std::string>& predicted, const std::set<std::string>& gold,
                          const std::string& out_dir) {
    write_file(out_dir + "/" + record.id + ".html", render_trigger_html(record.id, triggers, predicted, gold));
    nlohmann::json j;
    j["doc_id"] = record.id;
    j["predicted"] = predicted;
    j["gold"] = gold;
    j["triggers"] = nlohmann::json::array();
    for (const auto& t : triggers)
        j["triggers"].push_back(
            {{"channel", t.channel}, {"window", t.window}, {"tokens", t.tokens}, {"response", t.response}});
    std::ofstream jf(out_dir + "/" + record.id + ".json", std::ios::binary);
    if (!jf) throw std::runtime_error("explain: cannot write json for " + record.id);
    jf << j.dump(2) << '\n';
}

}  // namespace xmlt
