#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "xmlt/pipeline.hpp"
#include "xmlt/train.hpp"

using namespace xmlt;

TEST_SUITE_BEGIN("train");

namespace {

struct Toy {
    // 1-label task: label present iff token 2 appears
    std::vector<PreprocessedDoc> docs;
    std::vector<const PreprocessedDoc*> ptrs;
    std::vector<std::vector<std::uint8_t>> bits;

    explicit Toy(std::size_t n = 40, std::uint32_t seed = 123) {
        std::mt19937 rng(seed);
        for (std::size_t i = 0; i < n; i++) {
            PreprocessedDoc d;
            const bool pos = i % 2 == 0;
            std::vector<std::size_t> sent;
            for (int k = 0; k < 6; k++) sent.push_back(3 + rng() % 5);
            if (pos) sent[rng() % sent.size()] = 2;
            d.sentences.push_back(sent);
            d.spans.push_back({0, 1});
            docs.push_back(std::move(d));
            bits.push_back({pos ? std::uint8_t(1) : std::uint8_t(0)});
        }
        for (auto& d : docs) ptrs.push_back(&d);
    }
};

TrainConfig quick_config(std::size_t epochs = 10) {
    TrainConfig cfg;
    cfg.max_epochs = epochs;
    cfg.batch_size = 8;
    cfg.val_fraction = 0.2;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    Toy toy;
    std::mt19937 rng(1);
    CbowModel<float> model(8, 4, 1, rng);
    std::vector<std::vector<float>> before;
    for (auto& [n, t] : model.named_params()) before.push_back(t->values());
    TrainConfig cfg = quick_config(3);
    cfg.lr = 0.0;
    train_model(model, toy.ptrs, toy.bits, cfg);
    std::size_t i = 0;
    for (auto& [n, t] : model.named_params()) CHECK(t->values() == before[i++]);
}

TEST_CASE("same seed twice gives an identical history and parameters") {
    Toy toy;
    TrainConfig cfg = quick_config(5);
    std::mt19937 rng1(1), rng2(1);
    CbowModel<float> m1(8, 4, 1, rng1), m2(8, 4, 1, rng2);
    auto h1 = train_model(m1, toy.ptrs, toy.bits, cfg);
    auto h2 = train_model(m2, toy.ptrs, toy.bits, cfg);
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (std::size_t e = 0; e < h1.epochs.size(); e++) {
        CHECK(h1.epochs[e].loss == h2.epochs[e].loss);
        CHECK(h1.epochs[e].val_micro_f == h2.epochs[e].val_micro_f);
    }
    auto p1 = m1.named_params(), p2 = m2.named_params();
    for (std::size_t i = 0; i < p1.size(); i++) CHECK(p1[i].second->values() == p2[i].second->values());
}

TEST_CASE("separable toy task trains to validation micro-f 1") {
    Toy toy(60);
    std::mt19937 rng(2);
    CbowModel<float> model(8, 8, 1, rng);
    TrainConfig cfg = quick_config(12);
    cfg.lr = 5e-2;
    auto history = train_model(model, toy.ptrs, toy.bits, cfg);
    REQUIRE(history.epochs.size() >= 5);
    for (std::size_t e = 1; e < 5; e++) CHECK(history.epochs[e].loss < history.epochs[e - 1].loss);
    double best = 0;
    for (const auto& e : history.epochs) best = std::max(best, e.val_micro_f);
    CHECK(best == doctest::Approx(1.0));
}

TEST_CASE("adam with zero gradients keeps parameters fixed") {
    std::mt19937 rng(3);
    CbowModel<float> model(6, 3, 2, rng);
    std::vector<Tensor<float>*> params;
    for (auto& [n, t] : model.named_params()) params.push_back(t);
    std::vector<std::vector<float>> before;
    for (auto* p : params) before.push_back(p->values());
    TrainConfig cfg;
    Adam<float> adam(params, cfg);
    for (auto* p : params) p->zero_grad();
    adam.step(params);
    adam.step(params);
    std::size_t i = 0;
    for (auto* p : params) CHECK(p->values() == before[i++]);
}

TEST_CASE("one small adam step decreases the loss on a fixed batch") {
    for (std::uint32_t seed : {1u, 2u, 3u, 4u, 5u}) {
        std::mt19937 rng(seed);
        CbowModel<double> model(10, 4, 3, rng);
        PreprocessedDoc doc;
        doc.sentences = {{2, 5, 7, 3}};
        doc.spans = {{0, 1}};
        std::vector<std::uint8_t> bits = {1, 0, 1};
        auto loss_value = [&]() {
            Tape<double> t(false);
            return model.doc_loss(t, doc, bits).item();
        };
        const double before = loss_value();
        Tape<double> t;
        auto loss = model.doc_loss(t, doc, bits);
        t.backward(loss);
        std::vector<Tensor<double>*> params;
        for (auto& [n, p] : model.named_params()) params.push_back(p);
        TrainConfig cfg;
        cfg.lr = 1e-4;
        Adam<double> adam(params, cfg);
        adam.step(params);
        CHECK(loss_value() < before);
    }
}

TEST_CASE("early stopping returns the best-validation parameters") {
    Toy toy(50);
    std::mt19937 rng(5);
    CbowModel<float> model(8, 6, 1, rng);
    TrainConfig cfg = quick_config(20);
    cfg.lr = 5e-2;
    cfg.patience = 3;
    auto history = train_model(model, toy.ptrs, toy.bits, cfg);
    double best = 0;
    for (const auto& e : history.epochs) best = std::max(best, e.val_micro_f);
    // rebuild the validation split exactly as the loop does
    std::mt19937 split_rng(cfg.seed);
    std::vector<std::size_t> order(toy.ptrs.size());
    for (std::size_t i = 0; i < order.size(); i++) order[i] = i;
    std::shuffle(order.begin(), order.end(), split_rng);
    const std::size_t n_val = std::size_t(std::llround(cfg.val_fraction * double(toy.ptrs.size())));
    std::vector<const PreprocessedDoc*> val_docs;
    std::vector<std::vector<std::uint8_t>> val_gold;
    for (std::size_t k = 0; k < n_val; k++) {
        val_docs.push_back(toy.ptrs[order[k]]);
        val_gold.push_back(toy.bits[order[k]]);
    }
    const double final_f = micro_f_bits(predict_bits(model, val_docs, cfg.threshold), val_gold).f1;
    CHECK(final_f == doctest::Approx(best));
}

TEST_CASE("gradient clipping caps the global norm") {
    Tensor<float> a(Shape{3});
    a.set_tracked(true);
    a.grad() = {30.f, 40.f, 0.f};  // norm 50
    clip_global_norm<float>({&a}, 5.0);
    double norm = 0;
    for (auto g : a.grad()) norm += double(g) * double(g);
    CHECK(std::sqrt(norm) == doctest::Approx(5.0).epsilon(1e-5));
    Tensor<float> b(Shape{2});
    b.set_tracked(true);
    b.grad() = {0.3f, 0.4f};
    clip_global_norm<float>({&b}, 5.0);
    CHECK(b.grad()[0] == 0.3f);  // under the cap, untouched
}

TEST_CASE("checkpoint round trip reproduces outputs bit-exactly") {
    Toy toy;
    std::mt19937 rng(11);
    HagruModel<float> model(8, 4, 2, 1, rng);
    CheckpointMeta meta;
    meta.labels = {"100"};
    meta.label_freqs = {20};
    meta.vocab_hash = 0xabc;
    const std::string path = "ckpt_test.bin";
    save_checkpoint(model, meta, path);
    auto [loaded, meta2] = load_checkpoint<HagruModel<float>>(path, nullptr);
    CHECK(meta2.labels == meta.labels);
    std::mt19937 docrng(13);
    for (int i = 0; i < 10; i++) {
        PreprocessedDoc doc;
        const std::size_t n_sent = 1 + docrng() % 3;
        for (std::size_t s = 0; s < n_sent; s++) {
            std::vector<std::size_t> sent;
            for (std::size_t k = 0; k < 2 + docrng() % 5; k++) sent.push_back(2 + docrng() % 6);
            doc.sentences.push_back(sent);
            doc.spans.push_back({0, 1});
        }
        CHECK(model.doc_probs(doc) == loaded.doc_probs(doc));  // bit-identical
    }
    std::remove(path.c_str());
    std::remove(sidecar_path(path).c_str());
}

TEST_CASE("checkpoint rejects damage and mismatches") {
    std::mt19937 rng(17);
    CbowModel<float> model(6, 3, 2, rng);
    CheckpointMeta meta;
    meta.labels = {"a", "b"};
    meta.label_freqs = {2, 1};
    meta.vocab_hash = 0x1234;
    const std::string path = "ckpt_test2.bin";
    save_checkpoint(model, meta, path);

    SUBCASE("truncated file") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS((load_checkpoint<CbowModel<float>>(path, nullptr)), std::runtime_error);
    }
    SUBCASE("bad magic") {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE then garbage";
        out.close();
        CHECK_THROWS_AS((load_checkpoint<CbowModel<float>>(path, nullptr)), std::runtime_error);
    }
    SUBCASE("vocabulary hash mismatch is refused") {
        std::vector<std::vector<std::string>> docs = {{"x", "x", "y", "y"}};
        auto vocab = Vocabulary::build(docs, 1);
        CHECK_THROWS_WITH_AS((load_checkpoint<CbowModel<float>>(path, &vocab)),
                             doctest::Contains("vocabulary hash mismatch"), std::runtime_error);
    }
    SUBCASE("wrong model kind is refused") {
        CHECK_THROWS_AS((load_checkpoint<CnnModel<float>>(path, nullptr)), std::runtime_error);
    }
    std::remove(path.c_str());
    std::remove(sidecar_path(path).c_str());
}

TEST_CASE("divergence aborts with a diagnostic") {
    Toy toy(10);
    std::mt19937 rng(19);
    CbowModel<float> model(8, 4, 1, rng);
    // poison a parameter so the first forward pass yields NaN
    model.out.W.values()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg = quick_config(2);
    CHECK_THROWS_WITH_AS(train_model(model, toy.ptrs, toy.bits, cfg), doctest::Contains("diverged"),
                         std::runtime_error);
}

TEST_CASE("pipelines refuse unlabeled training sets") {
    Dataset ds;
    ds.records.push_back({"a", "some text .", {}, ""});
    ds.records.push_back({"b", "more text .", {}, ""});
    PipelineConfig cfg;
    cfg.model_kind = "cbow";
    cfg.min_count = 1;
    auto prep = prepare_training(ds, cfg);
    CHECK(prep.skipped_unlabeled.size() == 2);
    CHECK_THROWS_AS(train_and_save(prep, cfg, "."), std::runtime_error);
}

TEST_CASE("history csv layout") {
    TrainHistory h;
    h.epochs.push_back({1, 0.5, 0.25, 1.75});
    const std::string path = "hist_test.csv";
    h.save_csv(path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "epoch,loss,val_micro_f,seconds");
    std::getline(f, line);
    CHECK(line == "1,0.500000,0.250000,1.750");
    f.close();
    std::remove(path.c_str());
}

TEST_SUITE_END();
