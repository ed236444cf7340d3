#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "xmlt/explain.hpp"

using namespace xmlt;

TEST_SUITE_BEGIN("explain");

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cnn triggers") {
    std::mt19937 rng(97);
    SUBCASE("a handcrafted filter fires on its trigram") {
        CnnModel<double> m(8, 2, 1, 3, 1, rng);
        // embeddings: tokens 2,3,4 form the target trigram pattern
        std::fill(m.emb.table.values().begin(), m.emb.table.values().end(), 0.0);
        m.emb.table.values()[2 * 2] = 1.0;
        m.emb.table.values()[3 * 2 + 1] = 1.0;
        m.emb.table.values()[4 * 2] = -1.0;
        // filter matches exactly that embedding pattern
        m.conv.filters.values() = {1.0, 0.0, 0.0, 1.0, -1.0, 0.0};
        std::vector<std::vector<std::string>> docs = {{"pad", "unk", "ta", "tb", "tc", "x", "y", "z"}};
        Vocabulary vocab = Vocabulary::build({{"ta", "tb", "tc", "x", "y", "z"}}, 1);
        Tape<double> t;
        auto fwd = m.forward(t, {*vocab.id_of("x"), *vocab.id_of("ta"), *vocab.id_of("tb"), *vocab.id_of("tc"),
                                 *vocab.id_of("y")});
        // remap: model vocab ids coincide with the vocabulary here
        auto triggers = cnn_triggers(m, fwd, vocab);
        REQUIRE(triggers.size() == 1);
        CHECK(triggers[0].window == 1);
        CHECK(triggers[0].response == doctest::Approx(fwd.pooled.values()[0]));
        CHECK(triggers[0].tokens == std::vector<std::string>{"ta", "tb", "tc"});
    }
    SUBCASE("responses equal recomputation at the reported window") {
        CnnModel<double> m(10, 3, 5, 3, 2, rng);
        std::vector<std::size_t> ids = {2, 5, 7, 3, 9, 4, 6};
        Tape<double> t;
        auto fwd = m.forward(t, ids);
        std::vector<std::vector<std::string>> docs = {{"a", "b", "c", "d", "e", "f", "g", "h"}};
        auto vocab = Vocabulary::build(docs, 1);
        auto triggers = cnn_triggers(m, fwd, vocab);
        REQUIRE(triggers.size() == 5);
        for (const auto& tr : triggers) {
            double acc = 0;
            for (std::size_t k = 0; k < 3; k++)
                for (std::size_t e = 0; e < 3; e++)
                    acc += m.emb.table.values()[fwd.padded_ids[tr.window + k] * 3 + e] *
                           m.conv.filters.values()[tr.channel * 9 + k * 3 + e];
            CHECK(tr.response == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    SUBCASE("label filter keeps positively contributing channels") {
        CnnModel<double> m(10, 3, 4, 3, 2, rng);
        std::vector<std::size_t> ids = {2, 5, 7, 3};
        Tape<double> t;
        auto fwd = m.forward(t, ids);
        auto vocab = Vocabulary::build({{"a", "b", "c", "d", "e", "f", "g", "h"}}, 1);
        auto triggers = cnn_triggers(m, fwd, vocab, 1);
        for (const auto& tr : triggers) {
            const double w = m.out.W.values()[1 * 4 + tr.channel];
            CHECK(w * tr.response > 0);
        }
    }
}

TEST_CASE("hagru explanation argmax") {
    AttentionTrace trace;
    trace.sentence_weights = {{0.1, 0.7, 0.2}, {0.5, 0.25, 0.25}};
    trace.word_weights = {{0.2, 0.8}, {0.9, 0.05, 0.05}, {1.0}};
    SUBCASE("argmax over sentences then words") {
        auto loc = hagru_explain(trace, 0);
        CHECK(loc.sentence == 1);
        CHECK(loc.word == 0);
        auto loc2 = hagru_explain(trace, 1);
        CHECK(loc2.sentence == 0);
        CHECK(loc2.word == 1);
    }
    SUBCASE("ties break to the lowest index") {
        AttentionTrace t2;
        t2.sentence_weights = {{0.5, 0.5}};
        t2.word_weights = {{0.5, 0.5}, {1.0}};
        auto loc = hagru_explain(t2, 0);
        CHECK(loc.sentence == 0);
        CHECK(loc.word == 0);
    }
    SUBCASE("label out of range is an error") {
        CHECK_THROWS_AS(hagru_explain(trace, 9), std::invalid_argument);
    }
    SUBCASE("explanations are verified maxima") {
        std::mt19937 rng(101);
        std::uniform_real_distribution<double> d(0, 1);
        for (int iter = 0; iter < 20; iter++) {
            AttentionTrace t3;
            t3.sentence_weights.push_back({});
            for (int s = 0; s < 5; s++) t3.sentence_weights[0].push_back(d(rng));
            for (int s = 0; s < 5; s++) {
                t3.word_weights.push_back({});
                for (int w = 0; w < 4; w++) t3.word_weights[s].push_back(d(rng));
            }
            auto loc = hagru_explain(t3, 0);
            for (auto v : t3.sentence_weights[0]) CHECK(v <= t3.sentence_weights[0][loc.sentence]);
            for (auto v : t3.word_weights[loc.sentence]) CHECK(v <= t3.word_weights[loc.sentence][loc.word]);
        }
    }
}

TEST_CASE("report rendering") {
    Record rec;
    rec.id = "doc1";
    rec.text = "chest pain noted . no fever today . followup planned .";
    rec.labels = {"428", "682"};
    PreprocessedDoc doc;
    doc.spans = split_sentences(rec.text);
    doc.sentences.resize(doc.spans.size(), {2});

    AttentionTrace trace;
    trace.spans = doc.spans;
    trace.sentence_weights = {{0.2, 0.5, 0.3}, {1.0, 0.0, 0.0}};
    trace.word_weights = {{0.3, 0.4, 0.3, 0.0}, {0.25, 0.25, 0.25, 0.25}, {0.6, 0.2, 0.2}};
    trace.sentence_outputs = {{0.0}, {0.0}, {0.0}};

    auto space = LabelSpace::from_codes({"428", "682"}, {5, 3});
    const std::string dir = "explain_test_out";
    std::filesystem::create_directories(dir);

    SUBCASE("files are written and deterministic") {
        render_report(rec, doc, trace, {"428"}, rec.labels, space, dir);
        const std::string html1 = slurp(dir + "/doc1.html");
        const std::string json1 = slurp(dir + "/doc1.json");
        render_report(rec, doc, trace, {"428"}, rec.labels, space, dir);
        CHECK(slurp(dir + "/doc1.html") == html1);
        CHECK(slurp(dir + "/doc1.json") == json1);
    }
    SUBCASE("gold-but-unpredicted labels stay inspectable") {
        render_report(rec, doc, trace, {"428"}, rec.labels, space, dir);
        auto j = nlohmann::json::parse(slurp(dir + "/doc1.json"));
        bool found = false;
        for (const auto& l : j.at("labels"))
            if (l.at("code") == "682") {
                found = true;
                CHECK(l.at("predicted") == false);
                CHECK(l.at("gold") == true);
                CHECK(l.at("top_sentence") == 0);
            }
        CHECK(found);
    }
    SUBCASE("rendering from the parsed json reproduces the html bytes") {
        render_report(rec, doc, trace, {"428"}, rec.labels, space, dir);
        const std::string html1 = slurp(dir + "/doc1.html");
        auto j = nlohmann::json::parse(slurp(dir + "/doc1.json"));
        std::vector<LabelExplanation> labels;
        for (const auto& l : j.at("labels")) {
            LabelExplanation le;
            le.code = l.at("code").get<std::string>();
            le.predicted = l.at("predicted").get<bool>();
            le.gold = l.at("gold").get<bool>();
            le.sentence_weights = l.at("sentence_weights").get<std::vector<double>>();
            le.top_sentence = l.at("top_sentence").get<std::size_t>();
            le.top_word = l.at("top_word").get<std::size_t>();
            labels.push_back(std::move(le));
        }
        auto ww = j.at("word_weights").get<std::vector<std::vector<double>>>();
        const std::string html2 = render_attention_html(j.at("doc_id").get<std::string>(), sentence_tokens(rec, doc),
                                                        labels, ww);
        CHECK(html2 == html1);
    }
    SUBCASE("uniform weights render uniform intensities") {
        AttentionTrace uni = trace;
        uni.sentence_weights = {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
        render_report(rec, doc, uni, {"428"}, {"428"}, space, dir);
        const std::string html = slurp(dir + "/doc1.html");
        // all three sentences carry the same background alpha
        const std::string needle = "background:rgba(255,96,0,0.850000)";
        std::size_t count = 0, pos = 0;
        while ((pos = html.find(needle, pos)) != std::string::npos) {
            count++;
            pos += needle.size();
        }
        CHECK(count == 3);
    }
    SUBCASE("a single spike saturates only its own sentence") {
        render_report(rec, doc, trace, {"682"}, {"682"}, space, dir);
        const std::string html = slurp(dir + "/doc1.html");
        CHECK(html.find("background:rgba(255,96,0,0.850000)") != std::string::npos);
        CHECK(html.find("background:rgba(255,96,0,0.000000)") != std::string::npos);
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("trigger report rendering") {
    Record rec;
    rec.id = "doc2";
    rec.text = "alpha beta gamma .";
    rec.labels = {"100"};
    std::vector<NgramTrigger> triggers = {{0, 1, {"beta", "gamma", "."}, 2.5}, {3, 0, {"alpha", "beta", "gamma"}, 1.25}};
    const std::string dir = "explain_test_out2";
    std::filesystem::create_directories(dir);
    render_report(rec, triggers, {"100"}, rec.labels, dir);
    const std::string html = slurp(dir + "/doc2.html");
    CHECK(html.find("beta gamma .") != std::string::npos);
    CHECK(html.find("2.500000") != std::string::npos);
    auto j = nlohmann::json::parse(slurp(dir + "/doc2.json"));
    CHECK(j.at("triggers").size() == 2);
    CHECK(j.at("triggers")[0].at("window") == 1);
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
