// Micro-F scoring over (record, label) pairs, frequency-bin analysis, and
// the full vs rolled-up evaluation settings.
#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmlt/corpus.hpp"

namespace xmlt {

struct MicroCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
};

struct MicroScores {
    MicroCounts counts;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// Zero denominators yield 0 by convention.
inline MicroScores scores_from_counts(const MicroCounts& c) {
    MicroScores s;
    s.counts = c;
    const double tp = double(c.tp);
    s.precision = (c.tp + c.fp) ? tp / double(c.tp + c.fp) : 0.0;
    s.recall = (c.tp + c.fn) ? tp / double(c.tp + c.fn) : 0.0;
    s.f1 = (s.precision + s.recall > 0.0) ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

inline MicroScores micro_f(const std::vector<std::set<std::string>>& predictions,
                           const std::vector<std::set<std::string>>& gold) {
    if (predictions.size() != gold.size())
        throw std::invalid_argument("micro_f: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(gold.size()) + " gold sets");
    MicroCounts c;
    for (std::size_t i = 0; i < gold.size(); i++) {
        for (const auto& p : predictions[i])
            gold[i].count(p) ? c.tp++ : c.fp++;
        for (const auto& g : gold[i])
            if (!predictions[i].count(g)) c.fn++;
    }
    return scores_from_counts(c);
}

inline MicroScores micro_f_bits(const std::vector<std::vector<std::uint8_t>>& predictions,
                                const std::vector<std::vector<std::uint8_t>>& gold) {
    if (predictions.size() != gold.size()) throw std::invalid_argument("micro_f_bits: misaligned record lists");
    MicroCounts c;
    for (std::size_t i = 0; i < gold.size(); i++) {
        if (predictions[i].size() != gold[i].size()) throw std::invalid_argument("micro_f_bits: misaligned label vectors");
        for (std::size_t l = 0; l < gold[i].size(); l++) {
            if (predictions[i][l] && gold[i][l]) c.tp++;
            else if (predictions[i][l]) c.fp++;
            else if (gold[i][l]) c.fn++;
        }
    }
    return scores_from_counts(c);
}

struct Bin {
    std::size_t first_rank = 0;  // label ranks covered, 0-based inclusive
    std::size_t last_rank = 0;
    double mean_freq = 0;
    double precision = 0;
    double recall = 0;
};

struct BinReport {
    std::vector<Bin> bins;

    void save_csv(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("bins: cannot write " + path);
        f << "# per-bin precision/recall are micro-aggregated within the bin\n";
        f << "bin_index,first_rank,last_rank,mean_freq,precision,recall\n";
        char buf[160];
        for (std::size_t i = 0; i < bins.size(); i++) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.6f,%.6f,%.6f\n", i, bins[i].first_rank, bins[i].last_rank,
                          bins[i].mean_freq, bins[i].precision, bins[i].recall);
            f << buf;
        }
    }
};

// Labels in frequency-rank order (the LabelSpace order), chunked into
// consecutive bins; precision/recall computed over each bin's labels only.
inline BinReport frequency_bins(const LabelSpace& space, std::size_t bin_size,
                                const std::vector<std::set<std::string>>& predictions,
                                const std::vector<std::set<std::string>>& gold) {
    if (bin_size < 1) throw std::invalid_argument("frequency_bins: bin size must be >= 1");
    if (predictions.size() != gold.size()) throw std::invalid_argument("frequency_bins: misaligned record lists");
    BinReport report;
    for (std::size_t start = 0; start < space.size(); start += bin_size) {
        const std::size_t end = std::min(start + bin_size, space.size());
        Bin bin;
        bin.first_rank = start;
        bin.last_rank = end - 1;
        double freq_sum = 0;
        MicroCounts c;
        for (std::size_t rank = start; rank < end; rank++) {
            const std::string& code = space.code_of(rank);
            freq_sum += double(space.freq_of(rank));
            for (std::size_t i = 0; i < gold.size(); i++) {
                const bool p = predictions[i].count(code) > 0;
                const bool g = gold[i].count(code) > 0;
                if (p && g) c.tp++;
                else if (p) c.fp++;
                else if (g) c.fn++;
            }
        }
        bin.mean_freq = freq_sum / double(end - start);
        const MicroScores s = scores_from_counts(c);
        bin.precision = s.precision;
        bin.recall = s.recall;
        report.bins.push_back(bin);
    }
    return report;
}

enum class LabelSetting { full, rolled };

inline std::string to_string(LabelSetting s) { return s == LabelSetting::full ? "full" : "rolled"; }

inline LabelSetting label_setting_from(const std::string& s) {
    if (s == "full") return LabelSetting::full;
    if (s == "rolled") return LabelSetting::rolled;
    throw std::invalid_argument("label setting must be 'full' or 'rolled', got '" + s + "'");
}

struct EvalReport {
    LabelSetting setting = LabelSetting::full;
    MicroScores scores;

    nlohmann::json to_json() const {
        return {{"setting", to_string(setting)}, {"tp", scores.counts.tp},        {"fp", scores.counts.fp},
                {"fn", scores.counts.fn},        {"precision", scores.precision}, {"recall", scores.recall},
                {"f1", scores.f1}};
    }
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("report: cannot write " + path);
        f << to_json().dump(2) << '\n';
    }
};

// Gold sets come straight from the records (rolled up when requested); a
// model trained on the other label setting is refused.
inline EvalReport evaluate_setting(const std::vector<std::set<std::string>>& predictions, const Dataset& test,
                                   LabelSetting setting, LabelSetting model_setting) {
    if (setting != model_setting)
        throw std::invalid_argument("evaluate_setting: model trained for '" + to_string(model_setting) +
                                    "' labels cannot be scored in the '" + to_string(setting) + "' setting");
    std::vector<std::set<std::string>> gold;
    gold.reserve(test.size());
    for (const auto& r : test.records) {
        if (setting == LabelSetting::rolled) {
            std::set<std::string> rolled;
            for (const auto& c : r.labels) rolled.insert(rollup_label(c));
            gold.push_back(std::move(rolled));
        } else {
            gold.push_back(r.labels);
        }
    }
    EvalReport rep;
    rep.setting = setting;
    rep.scores = micro_f(predictions, gold);
    return rep;
}

}  // namespace xmlt
