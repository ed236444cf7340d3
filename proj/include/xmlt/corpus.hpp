// Dataset representation: JSONL ingestion, label-space management,
// ICD-style roll-up, corpus statistics, patient-disjoint splits, and a
// seeded synthetic corpus generator with planted trigger sentences.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xmlt/textprep.hpp"

namespace xmlt {

struct Record {
    std::string id;
    std::string text;
    std::set<std::string> labels;
    std::string patient;  // optional, empty when absent
};

struct Dataset {
    std::vector<Record> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

inline Dataset load_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_jsonl: cannot read " + path);
    Dataset ds;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        lineno++;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_jsonl: " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j.contains("labels"))
            throw std::runtime_error("load_jsonl: " + path + ":" + std::to_string(lineno) +
                                     ": expected object with id, text, labels");
        Record r;
        try {
            r.id = j.at("id").get<std::string>();
            r.text = j.at("text").get<std::string>();
            for (const auto& l : j.at("labels")) {
                const std::string code = l.get<std::string>();
                if (code.empty() || code.find_first_of(" \t\n\r") != std::string::npos)
                    throw std::runtime_error("label code '" + code + "' is empty or contains whitespace");
                r.labels.insert(code);
            }
            if (j.contains("patient")) r.patient = j.at("patient").get<std::string>();
        } catch (const std::exception& e) {
            throw std::runtime_error("load_jsonl: " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(r.id).second)
            throw std::runtime_error("load_jsonl: " + path + ":" + std::to_string(lineno) + ": duplicate id '" + r.id + "'");
        ds.records.push_back(std::move(r));
    }
    return ds;
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_jsonl: cannot write " + path);
    for (const auto& r : ds.records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["text"] = r.text;
        j["labels"] = r.labels;
        if (!r.patient.empty()) j["patient"] = r.patient;
        f << j.dump() << '\n';
    }
}

// 682.6 -> 682; codes without a dot are already rolled up.
inline std::string rollup_label(const std::string& code) { return code.substr(0, code.find('.')); }

inline Dataset rollup_dataset(const Dataset& ds) {
    Dataset out = ds;
    for (auto& r : out.records) {
        std::set<std::string> rolled;
        for (const auto& c : r.labels) rolled.insert(rollup_label(c));
        r.labels = std::move(rolled);
    }
    return out;
}

// Dense label indices ordered by descending training frequency, ties
// lexicographic, so rank-based analyses are deterministic.
class LabelSpace {
public:
    LabelSpace() = default;

    static LabelSpace from_dataset(const Dataset& ds) {
        std::map<std::string, std::uint64_t> counts;
        for (const auto& r : ds.records)
            for (const auto& c : r.labels) counts[c]++;
        std::vector<std::pair<std::string, std::uint64_t>> items(counts.begin(), counts.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        LabelSpace ls;
        for (auto& [code, c] : items) ls.push(code, c);
        return ls;
    }

    static LabelSpace from_codes(const std::vector<std::string>& codes, const std::vector<std::uint64_t>& freqs) {
        if (codes.size() != freqs.size()) throw std::invalid_argument("LabelSpace: codes/freqs size mismatch");
        LabelSpace ls;
        for (std::size_t i = 0; i < codes.size(); i++) ls.push(codes[i], freqs[i]);
        return ls;
    }

    std::size_t size() const { return codes_.size(); }
    const std::string& code_of(std::size_t idx) const { return codes_.at(idx); }
    std::uint64_t freq_of(std::size_t idx) const { return freqs_.at(idx); }
    const std::vector<std::string>& codes() const { return codes_; }
    const std::vector<std::uint64_t>& freqs() const { return freqs_; }

    std::optional<std::size_t> index_of(const std::string& code) const {
        auto it = index_.find(code);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<std::uint8_t> bits_for(const std::set<std::string>& labels) const {
        std::vector<std::uint8_t> bits(codes_.size(), 0);
        for (const auto& c : labels)
            if (auto idx = index_of(c)) bits[*idx] = 1;
        return bits;
    }

private:
    std::vector<std::string> codes_;
    std::vector<std::uint64_t> freqs_;
    std::unordered_map<std::string, std::size_t> index_;

    void push(const std::string& code, std::uint64_t freq) {
        index_.emplace(code, codes_.size());
        codes_.push_back(code);
        freqs_.push_back(freq);
    }
};

struct PreprocessedDoc {
    std::vector<std::vector<std::size_t>> sentences;  // token ids
    std::vector<SentenceSpan> spans;                  // offsets into the record text

    bool empty() const { return sentences.empty(); }
    std::size_t token_count() const {
        std::size_t n = 0;
        for (const auto& s : sentences) n += s.size();
        return n;
    }
    std::vector<std::size_t> flat() const {
        std::vector<std::size_t> out;
        out.reserve(token_count());
        for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
        return out;
    }
};

struct PreprocessedDataset {
    std::vector<PreprocessedDoc> docs;               // aligned 1:1 with the dataset
    std::vector<std::string> empty_doc_ids;          // flagged: reduced to zero sentences
};

// Documents are never truncated by default; a cap of 0 means unlimited.
inline PreprocessedDoc truncate_doc(const PreprocessedDoc& doc, std::size_t max_tokens) {
    if (max_tokens == 0 || doc.token_count() <= max_tokens) return doc;
    PreprocessedDoc out;
    std::size_t budget = max_tokens;
    for (std::size_t s = 0; s < doc.sentences.size() && budget > 0; s++) {
        std::vector<std::size_t> sent = doc.sentences[s];
        if (sent.size() > budget) sent.resize(budget);
        budget -= sent.size();
        out.sentences.push_back(std::move(sent));
        out.spans.push_back(doc.spans[s]);
    }
    return out;
}

// Sentence-split, tokenize, pseudo-map, OOV-resolve, encode. Empty
// sentences are dropped; records reduced to nothing are flagged.
inline PreprocessedDataset preprocess_dataset(const Dataset& ds, const Vocabulary& vocab, const EditDistanceIndex& index,
                                              const std::set<std::string>& abbreviations = default_abbreviations()) {
    PreprocessedDataset out;
    out.docs.reserve(ds.size());
    std::unordered_map<std::string, std::size_t> oov_cache;
    auto encode = [&](const std::string& tok) -> std::size_t {
        if (auto id = vocab.id_of(tok)) return *id;
        auto it = oov_cache.find(tok);
        if (it != oov_cache.end()) return it->second;
        const std::string mapped = nearest_in_vocab(tok, vocab, index);
        const std::size_t id = vocab.id_of(mapped).value_or(Vocabulary::unk_id);
        oov_cache.emplace(tok, id);
        return id;
    };
    for (const auto& r : ds.records) {
        PreprocessedDoc doc;
        for (const auto& span : split_sentences(r.text, abbreviations)) {
            const std::string sent = r.text.substr(span.begin, span.end - span.begin);
            std::vector<std::size_t> ids;
            for (const auto& tok : tokenize(sent)) ids.push_back(encode(map_pseudo(tok.text)));
            if (!ids.empty()) {
                doc.sentences.push_back(std::move(ids));
                doc.spans.push_back(span);
            }
        }
        if (doc.empty()) out.empty_doc_ids.push_back(r.id);
        out.docs.push_back(std::move(doc));
    }
    return out;
}

struct CorpusStats {
    std::size_t records = 0;
    std::size_t unique_tokens = 0;
    double avg_tokens_per_record = 0;
    double avg_sentences_per_record = 0;
    std::size_t labels = 0;
    double cardinality = 0;  // mean labels per record
    double density = 0;      // cardinality / label count

    nlohmann::json to_json() const {
        return {{"records", records},
                {"unique_tokens", unique_tokens},
                {"avg_tokens_per_record", avg_tokens_per_record},
                {"avg_sentences_per_record", avg_sentences_per_record},
                {"labels", labels},
                {"cardinality", cardinality},
                {"density", density}};
    }
};

inline CorpusStats compute_stats(const Dataset& ds, const PreprocessedDataset& tokenized) {
    if (ds.empty()) throw std::invalid_argument("compute_stats: empty dataset");
    if (tokenized.docs.size() != ds.size())
        throw std::invalid_argument("compute_stats: tokenized dataset not aligned with records");
    CorpusStats st;
    st.records = ds.size();
    std::unordered_set<std::size_t> distinct;
    std::size_t tokens = 0, sentences = 0, label_assignments = 0;
    for (const auto& doc : tokenized.docs) {
        sentences += doc.sentences.size();
        for (const auto& s : doc.sentences)
            for (auto id : s) {
                distinct.insert(id);
                tokens++;
            }
    }
    std::set<std::string> label_set;
    for (const auto& r : ds.records) {
        label_assignments += r.labels.size();
        label_set.insert(r.labels.begin(), r.labels.end());
    }
    st.unique_tokens = distinct.size();
    st.avg_tokens_per_record = double(tokens) / double(st.records);
    st.avg_sentences_per_record = double(sentences) / double(st.records);
    st.labels = label_set.size();
    st.cardinality = double(label_assignments) / double(st.records);
    st.density = st.labels ? st.cardinality / double(st.labels) : 0.0;
    return st;
}

// No patient key ends up in both halves; records without a patient key use
// their id as the key.
inline std::pair<Dataset, Dataset> split_patient_disjoint(const Dataset& ds,
                                                          const std::function<std::string(const Record&)>& patient_of,
                                                          double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split: test_fraction must be in (0,1)");
    std::map<std::string, std::vector<std::size_t>> by_patient;
    for (std::size_t i = 0; i < ds.size(); i++) by_patient[patient_of(ds.records[i])].push_back(i);
    if (by_patient.size() < 2) throw std::invalid_argument("split: need at least 2 patients");
    std::vector<std::string> patients;
    for (const auto& [p, _] : by_patient) patients.push_back(p);
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::shuffle(patients.begin(), patients.end(), rng);
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * double(patients.size())));
    n_test = std::max<std::size_t>(1, std::min(n_test, patients.size() - 1));
    std::unordered_set<std::string> test_patients(patients.begin(), patients.begin() + n_test);
    Dataset train, test;
    for (const auto& r : ds.records)
        (test_patients.count(patient_of(r)) ? test : train).records.push_back(r);
    return {std::move(train), std::move(test)};
}

inline std::pair<Dataset, Dataset> split_patient_disjoint(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    return split_patient_disjoint(
        ds, [](const Record& r) { return r.patient.empty() ? r.id : r.patient; }, test_fraction, seed);
}

struct SynthConfig {
    std::size_t labels = 50;
    std::size_t triggers_per_label = 1;  // each phrase is 2-4 tokens
    std::size_t noise_vocab = 500;
    std::size_t docs = 2000;
    double mean_labels_per_doc = 3.0;
    double zipf_exponent = 1.0;
    bool negation_mode = false;  // plant negated triggers of non-assigned labels
    std::uint64_t seed = 1;
};

struct SynthResult {
    Dataset dataset;
    std::vector<std::string> label_codes;
    // per record id: label code -> sentence index carrying its trigger
    std::unordered_map<std::string, std::map<std::string, std::size_t>> trigger_sentence;
};

namespace detail {

inline std::string synth_label_code(std::size_t i) { return std::to_string(100 + i); }

// Distinctive key token: each base-26 letter of the label index and the
// phrase-token index repeated four times, so any two key tokens (across
// labels or across phrases of one label) stay > 3 edits apart and cannot
// be rescued by the OOV mapping.
inline std::string synth_key_token(std::size_t label, std::size_t token_idx) {
    std::string t = "q";
    t.append(4, char('a' + (label / 26) % 26));
    t.append(4, char('a' + label % 26));
    t.append(4, char('a' + (token_idx / 26) % 26));
    t.append(4, char('a' + token_idx % 26));
    return t;
}

}  // namespace detail

inline SynthResult generate_synthetic(const SynthConfig& cfg) {
    if (cfg.labels == 0 || cfg.docs == 0) throw std::invalid_argument("synth: labels and docs must be positive");
    if (cfg.triggers_per_label == 0) throw std::invalid_argument("synth: every label needs at least one trigger phrase");
    if (cfg.mean_labels_per_doc < 1.0) throw std::invalid_argument("synth: mean labels per doc must be >= 1");

    std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));
    static const std::vector<std::string> negs = {"no", "denies", "without"};

    SynthResult res;
    // Every phrase token is key-derived, so a phrase that falls below the
    // vocabulary min-count leaves no label signal behind.
    std::vector<std::vector<std::vector<std::string>>> phrases(cfg.labels);
    std::set<std::vector<std::string>> phrase_set;
    for (std::size_t l = 0; l < cfg.labels; l++) {
        res.label_codes.push_back(detail::synth_label_code(l));
        for (std::size_t p = 0; p < cfg.triggers_per_label; p++) {
            const std::size_t len = 2 + rng() % 3;  // 2-4 tokens
            std::vector<std::string> phrase;
            for (std::size_t i = 0; i < len; i++) phrase.push_back(detail::synth_key_token(l, p * 4 + i));
            if (!phrase_set.insert(phrase).second)
                throw std::runtime_error("synth: trigger phrase collision across labels");
            phrases[l].push_back(std::move(phrase));
        }
    }

    // noise lexicon: digit-free lowercase words
    std::vector<std::string> noise;
    std::set<std::string> noise_set;
    std::uniform_int_distribution<int> len_dist(4, 8);
    std::uniform_int_distribution<int> ch_dist(0, 25);
    while (noise.size() < cfg.noise_vocab) {
        std::string w;
        const int len = len_dist(rng);
        for (int i = 0; i < len; i++) w.push_back(char('a' + ch_dist(rng)));
        if (w[0] == 'q') continue;  // keep clear of the key-token shape
        if (noise_set.insert(w).second) noise.push_back(w);
    }

    std::vector<double> zipf(cfg.labels);
    for (std::size_t l = 0; l < cfg.labels; l++) zipf[l] = std::pow(double(l + 1), -cfg.zipf_exponent);
    std::discrete_distribution<std::size_t> label_dist(zipf.begin(), zipf.end());
    const double extra_mean = cfg.mean_labels_per_doc - 1.0;
    std::poisson_distribution<int> extra_labels(extra_mean > 0.0 ? extra_mean : 1.0);
    std::uniform_int_distribution<int> noise_sent_count(2, 4);
    std::uniform_int_distribution<int> noise_sent_len(5, 8);

    auto noise_sentence = [&]() {
        std::vector<std::string> s;
        const int len = noise_sent_len(rng);
        for (int i = 0; i < len; i++) s.push_back(noise[rng() % noise.size()]);
        return s;
    };

    for (std::size_t d = 0; d < cfg.docs; d++) {
        const std::size_t extra = extra_mean > 0.0 ? std::size_t(std::max(0, extra_labels(rng))) : 0;
        const std::size_t want = std::min<std::size_t>(cfg.labels, 1 + extra);
        std::set<std::size_t> assigned;
        for (std::size_t attempts = 0; assigned.size() < want && attempts < 50 * want; attempts++)
            assigned.insert(label_dist(rng));

        // sentence pool: (tokens, trigger label or none)
        std::vector<std::pair<std::vector<std::string>, std::optional<std::size_t>>> pool;
        const int n_noise = noise.empty() ? 0 : noise_sent_count(rng);
        for (int i = 0; i < n_noise; i++) pool.push_back({noise_sentence(), std::nullopt});
        for (std::size_t l : assigned) {
            // trigger sentence: the phrase plus per-document noise dressing
            std::vector<std::string> s = phrases[l][rng() % phrases[l].size()];
            if (!noise.empty()) {
                const int dress = int(rng() % 3);
                for (int i = 0; i < dress; i++) s.push_back(noise[rng() % noise.size()]);
            }
            pool.push_back({std::move(s), l});
        }
        if (cfg.negation_mode) {
            const int n_neg = 1 + int(rng() % 3);
            std::set<std::size_t> used;
            for (int i = 0; i < n_neg; i++) {
                std::size_t l = label_dist(rng);
                for (std::size_t a = 0; a < 50 && (assigned.count(l) || used.count(l)); a++) l = label_dist(rng);
                if (assigned.count(l) || used.count(l)) continue;
                used.insert(l);
                std::vector<std::string> s = {negs[rng() % negs.size()]};
                const auto& ph = phrases[l][rng() % phrases[l].size()];
                s.insert(s.end(), ph.begin(), ph.end());
                pool.push_back({std::move(s), std::nullopt});
            }
        }
        std::shuffle(pool.begin(), pool.end(), rng);

        Record r;
        r.id = "d" + std::to_string(1000000 + d).substr(1);
        std::map<std::string, std::size_t> triggers;
        std::string text;
        for (std::size_t si = 0; si < pool.size(); si++) {
            const auto& [tokens, label] = pool[si];
            if (label) {
                r.labels.insert(detail::synth_label_code(*label));
                triggers[detail::synth_label_code(*label)] = si;
            }
            for (const auto& t : tokens) {
                text += t;
                text += ' ';
            }
            text += ".";
            if (si + 1 < pool.size()) text += ' ';
        }
        r.text = std::move(text);
        res.trigger_sentence.emplace(r.id, std::move(triggers));
        res.dataset.records.push_back(std::move(r));
    }
    return res;
}

}  // namespace xmlt
