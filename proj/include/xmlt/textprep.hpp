// Text normalization pipeline: rule-based tokenizer, digit pseudo-tokens,
// min-count vocabulary, BK-tree edit-distance index for OOV mapping, and
// sentence segmentation.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace xmlt {

struct TokenSpan {
    std::string text;   // lowercased
    std::size_t begin;  // byte offsets into the original text
    std::size_t end;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string s) {
    for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

// Lowercase, split on whitespace, detach leading/trailing punctuation as
// single-character tokens, split a trailing "'s" clitic. Interior
// punctuation stays ("11/2/1986" is one token).
inline std::vector<TokenSpan> tokenize(const std::string& text) {
    std::vector<TokenSpan> out;
    auto emit = [&](std::size_t b, std::size_t e) {
        if (e > b) out.push_back({detail::lower(text.substr(b, e - b)), b, e});
    };
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && detail::is_space(text[i])) i++;
        if (i >= n) break;
        std::size_t j = i;
        while (j < n && !detail::is_space(text[j])) j++;
        std::size_t b = i, e = j;
        // leading punctuation, except a clitic chunk like "'s"
        while (b < e && detail::is_punct(text[b])) {
            const bool clitic = text[b] == '\'' && e - b == 2 && (text[b + 1] == 's' || text[b + 1] == 'S');
            if (clitic) break;
            emit(b, b + 1);
            b++;
        }
        // trailing punctuation, emitted after the core in text order
        std::size_t core_end = e;
        while (core_end > b && detail::is_punct(text[core_end - 1])) core_end--;
        if (core_end > b) {
            const bool has_clitic = core_end - b > 2 && text[core_end - 2] == '\'' &&
                                    (text[core_end - 1] == 's' || text[core_end - 1] == 'S');
            if (has_clitic) {
                emit(b, core_end - 2);
                emit(core_end - 2, core_end);
            } else {
                emit(b, core_end);
            }
        }
        for (std::size_t k = core_end; k < e; k++) emit(k, k + 1);
        i = j;
    }
    return out;
}

// Every decimal digit becomes the literal 'd'; idempotent, length-preserving.
inline std::string map_pseudo(const std::string& token) {
    std::string out = token;
    for (auto& c : out)
        if (c >= '0' && c <= '9') c = 'd';
    return out;
}

class Vocabulary {
public:
    static constexpr std::size_t pad_id = 0;
    static constexpr std::size_t unk_id = 1;
    static constexpr const char* pad_token = "<PAD>";
    static constexpr const char* unk_token = "<UNK>";

    Vocabulary() {
        add_reserved(pad_token);
        add_reserved(unk_token);
    }

    // Tokens must already be pseudo-mapped. Keeps tokens occurring at least
    // min_count times, ordered by descending frequency then lexicographic.
    static Vocabulary build(const std::vector<std::vector<std::string>>& docs, std::size_t min_count) {
        if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
        std::map<std::string, std::uint64_t> counts;
        std::size_t total = 0;
        for (const auto& doc : docs)
            for (const auto& tok : doc) {
                counts[tok]++;
                total++;
            }
        if (total == 0) throw std::invalid_argument("build_vocab: empty corpus");
        std::vector<std::pair<std::string, std::uint64_t>> kept;
        for (const auto& [tok, c] : counts)
            if (c >= min_count) kept.emplace_back(tok, c);
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (auto& [tok, c] : kept) v.push(tok, c);
        return v;
    }

    std::optional<std::size_t> id_of(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    const std::string& token_of(std::size_t id) const { return tokens_.at(id); }
    std::uint64_t freq_of(std::size_t id) const { return freqs_.at(id); }
    std::size_t size() const { return tokens_.size(); }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocab: cannot write " + path);
        for (std::size_t i = 0; i < tokens_.size(); i++) f << tokens_[i] << '\t' << freqs_[i] << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocab: cannot read " + path);
        Vocabulary v;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            lineno++;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error("vocab: " + path + ":" + std::to_string(lineno) + ": missing tab");
            const std::string tok = line.substr(0, tab);
            const std::uint64_t freq = std::stoull(line.substr(tab + 1));
            if (lineno == 1 || lineno == 2) {
                const char* want = lineno == 1 ? pad_token : unk_token;
                if (tok != want)
                    throw std::runtime_error("vocab: " + path + ": line " + std::to_string(lineno) + " must be " + want);
                continue;
            }
            v.push(tok, freq);
        }
        return v;
    }

    // FNV-1a over the serialized entries; couples checkpoints to the
    // vocabulary they were trained with.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ull;
            }
        };
        for (std::size_t i = 0; i < tokens_.size(); i++) mix(tokens_[i] + "\t" + std::to_string(freqs_[i]) + "\n");
        return h;
    }

private:
    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> freqs_;
    std::unordered_map<std::string, std::size_t> index_;

    void add_reserved(const std::string& tok) { push(tok, 0); }
    void push(const std::string& tok, std::uint64_t freq) {
        index_.emplace(tok, tokens_.size());
        tokens_.push_back(tok);
        freqs_.push_back(freq);
    }
};

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<std::size_t> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; j++) prev[j] = j;
    for (std::size_t i = 1; i <= m; i++) {
        cur[0] = i;
        for (std::size_t j = 1; j <= n; j++) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

// Metric tree over vocabulary tokens keyed by Levenshtein distance.
// Queries return the nearest token within the radius; ties break to the
// higher training frequency, then lexicographic order.
class EditDistanceIndex {
public:
    explicit EditDistanceIndex(const Vocabulary& vocab, std::size_t radius = 3) : radius_(radius) {
        for (std::size_t id = 2; id < vocab.size(); id++) insert(vocab.token_of(id), vocab.freq_of(id));
    }

    std::size_t radius() const { return radius_; }
    bool empty() const { return nodes_.empty(); }

    struct Hit {
        std::string token;
        std::size_t distance;
        std::uint64_t freq;
    };

    std::optional<Hit> query(const std::string& q) const {
        if (nodes_.empty()) return std::nullopt;
        std::optional<Hit> best;
        search(0, q, best);
        return best;
    }

private:
    struct Node {
        std::string token;
        std::uint64_t freq;
        std::map<std::size_t, std::size_t> children;  // distance -> node index
    };
    std::vector<Node> nodes_;
    std::size_t radius_;

    void insert(const std::string& token, std::uint64_t freq) {
        if (nodes_.empty()) {
            nodes_.push_back({token, freq, {}});
            return;
        }
        std::size_t cur = 0;
        for (;;) {
            const std::size_t d = levenshtein(token, nodes_[cur].token);
            if (d == 0) return;  // duplicate, vocabulary guarantees none
            auto it = nodes_[cur].children.find(d);
            if (it == nodes_[cur].children.end()) {
                nodes_.push_back({token, freq, {}});
                nodes_[cur].children.emplace(d, nodes_.size() - 1);
                return;
            }
            cur = it->second;
        }
    }

    bool better(const Hit& a, const Hit& b) const {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.freq != b.freq) return a.freq > b.freq;
        return a.token < b.token;
    }

    void search(std::size_t node, const std::string& q, std::optional<Hit>& best) const {
        const Node& nd = nodes_[node];
        const std::size_t d = levenshtein(q, nd.token);
        if (d <= radius_) {
            Hit h{nd.token, d, nd.freq};
            if (!best || better(h, *best)) best = h;
        }
        const std::size_t bound = best ? std::min(best->distance, radius_) : radius_;
        for (const auto& [key, child] : nd.children) {
            const std::size_t lo = d > key ? d - key : key - d;
            if (lo <= bound) search(child, q, best);
        }
    }
};

// In-vocabulary tokens map to themselves; anything else maps to the nearest
// vocabulary token within the index radius, or <UNK> beyond it.
inline std::string nearest_in_vocab(const std::string& token, const Vocabulary& vocab, const EditDistanceIndex& index) {
    if (vocab.id_of(token)) return token;
    auto hit = index.query(token);
    return hit ? hit->token : Vocabulary::unk_token;
}

struct SentenceSpan {
    std::size_t begin;
    std::size_t end;
};

inline const std::set<std::string>& default_abbreviations() {
    static const std::set<std::string> abbr = {"dr",  "mr",  "mrs", "ms", "st", "vs", "etc", "no",
                                               "resp", "approx", "pt", "pts", "yo", "wk", "mg", "ml"};
    return abbr;
}

inline std::set<std::string> load_abbreviations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("abbreviations: cannot read " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && detail::is_space(line.back())) line.pop_back();
        if (!line.empty()) out.insert(detail::lower(line));
    }
    return out;
}

// Splits after '.', '!', '?' followed by whitespace and at blank lines.
// A period terminating a single letter or a known abbreviation does not end
// the sentence.
inline std::vector<SentenceSpan> split_sentences(const std::string& text,
                                                 const std::set<std::string>& abbreviations = default_abbreviations()) {
    std::vector<SentenceSpan> spans;
    const std::size_t n = text.size();
    auto flush = [&](std::size_t b, std::size_t e) {
        while (b < e && detail::is_space(text[b])) b++;
        while (e > b && detail::is_space(text[e - 1])) e--;
        if (e > b) spans.push_back({b, e});
    };
    std::size_t start = 0;
    for (std::size_t i = 0; i < n; i++) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            const bool at_end = i + 1 >= n;
            if (!at_end && !detail::is_space(text[i + 1])) continue;
            if (c == '.') {
                std::size_t wb = i;
                while (wb > start && !detail::is_space(text[wb - 1]) && !detail::is_punct(text[wb - 1])) wb--;
                const std::string word = detail::lower(text.substr(wb, i - wb));
                const bool single_letter = word.size() == 1 && detail::is_alpha(word[0]);
                if (single_letter || abbreviations.count(word)) continue;
            }
            flush(start, i + 1);
            start = i + 1;
        } else if (c == '\n') {
            std::size_t j = i + 1;
            while (j < n && (text[j] == ' ' || text[j] == '\t' || text[j] == '\r')) j++;
            if (j < n && text[j] == '\n') {
                flush(start, i);
                start = j + 1;
                i = j;
            }
        }
    }
    flush(start, n);
    return spans;
}

}  // namespace xmlt
