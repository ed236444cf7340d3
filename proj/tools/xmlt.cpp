// xmlt: multi-label tagging of long documents over very large label sets.
// Subcommands wire the library into reproducible pipelines; every
// artifact-writing run echoes its effective config into the output
// directory.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmlt/gradcheck.hpp"
#include "xmlt/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int log_level() {
    const char* env = std::getenv("XMLTAG_LOG");
    if (!env) return 1;
    try {
        return std::stoi(env);
    } catch (...) {
        return 1;
    }
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << msg << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::string model;
    std::string labels;
    std::string train_path;
    std::string test_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::int64_t threads = -1;
};

xmlt::PipelineConfig effective_config(const CommonOpts& o) {
    xmlt::PipelineConfig cfg;
    if (!o.config_path.empty()) {
        std::ifstream f(o.config_path);
        if (!f) throw std::runtime_error("cannot read config " + o.config_path);
        json j;
        f >> j;
        cfg = xmlt::PipelineConfig::from_json(j);
    }
    // flags override the file
    if (!o.model.empty()) cfg.model_kind = o.model;
    if (!o.labels.empty()) cfg.setting = xmlt::label_setting_from(o.labels);
    if (o.seed >= 0) {
        cfg.train.seed = std::uint64_t(o.seed);
        cfg.linear.seed = std::uint64_t(o.seed);
        cfg.synth.seed = std::uint64_t(o.seed);
    }
    if (o.threads >= 1) cfg.threads = std::size_t(o.threads);
    return cfg;
}

void echo_config(const xmlt::PipelineConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/config.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out_dir + "/config.json");
    f << cfg.to_json().dump(2) << '\n';
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file; flags override it");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--threads", o.threads, "worker thread cap");
}

int cmd_synth(const CommonOpts& o) {
    auto cfg = effective_config(o);
    echo_config(cfg, o.out_dir);
    auto res = xmlt::generate_synthetic(cfg.synth);
    xmlt::save_jsonl(res.dataset, o.out_dir + "/corpus.jsonl");
    std::ofstream tf(o.out_dir + "/triggers.jsonl", std::ios::binary);
    for (const auto& r : res.dataset.records) {
        json j;
        j["id"] = r.id;
        j["triggers"] = res.trigger_sentence.at(r.id);
        tf << j.dump() << '\n';
    }
    info("synth: wrote " + std::to_string(res.dataset.size()) + " documents to " + o.out_dir);
    return 0;
}

int cmd_preprocess(const CommonOpts& o) {
    auto cfg = effective_config(o);
    echo_config(cfg, o.out_dir);
    auto ds = xmlt::load_jsonl(o.train_path);
    auto prep = xmlt::prepare_training(ds, cfg);
    prep.vocab.save(o.out_dir + "/vocab.tsv");
    std::ofstream ef(o.out_dir + "/encoded.jsonl", std::ios::binary);
    for (std::size_t i = 0; i < prep.dataset.size(); i++) {
        json j;
        j["id"] = prep.dataset.records[i].id;
        j["sentences"] = prep.pre.docs[i].sentences;
        ef << j.dump() << '\n';
    }
    if (!prep.skipped_empty.empty())
        info("preprocess: " + std::to_string(prep.skipped_empty.size()) + " records reduced to zero sentences");
    info("preprocess: vocabulary of " + std::to_string(prep.vocab.size()) + " tokens");
    return 0;
}

int cmd_stats(const CommonOpts& o) {
    auto cfg = effective_config(o);
    auto ds = xmlt::load_jsonl(o.train_path);
    if (cfg.setting == xmlt::LabelSetting::rolled) ds = xmlt::rollup_dataset(ds);
    const auto abbrev = cfg.abbreviations();
    auto vocab = xmlt::Vocabulary::build(xmlt::pseudo_tokenized(ds, abbrev), cfg.min_count);
    xmlt::EditDistanceIndex index(vocab, cfg.edit_radius);
    auto pre = xmlt::preprocess_dataset(ds, vocab, index, abbrev);
    auto stats = xmlt::compute_stats(ds, pre);
    const std::string out = stats.to_json().dump(2);
    std::cout << out << "\n";
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        std::ofstream f(o.out_dir + "/stats.json", std::ios::binary);
        f << out << '\n';
    }
    return 0;
}

int cmd_train(const CommonOpts& o) {
    auto cfg = effective_config(o);
    echo_config(cfg, o.out_dir);
    auto ds = xmlt::load_jsonl(o.train_path);
    auto prep = xmlt::prepare_training(ds, cfg);
    prep.vocab.save(o.out_dir + "/vocab.tsv");
    if (!prep.skipped_empty.empty())
        info("train: excluded " + std::to_string(prep.skipped_empty.size()) + " records with no usable sentences");
    if (!prep.skipped_unlabeled.empty())
        info("train: excluded " + std::to_string(prep.skipped_unlabeled.size()) + " records with no gold labels");
    auto history = xmlt::train_and_save(prep, cfg, o.out_dir);
    if (!history.epochs.empty()) {
        const auto& last = history.epochs.back();
        info("train: " + std::to_string(history.epochs.size()) + " epochs, final val Micro-F " +
             std::to_string(last.val_micro_f));
    }
    info("train: checkpoint at " + o.out_dir + "/model.bin");
    return 0;
}

int cmd_eval(const CommonOpts& o) {
    auto cfg = effective_config(o);
    auto vocab = xmlt::Vocabulary::load(o.out_dir + "/vocab.tsv");
    auto meta = xmlt::read_sidecar(o.out_dir + "/model.bin");
    auto test = xmlt::load_jsonl(o.test_path);
    const xmlt::LabelSetting setting = o.labels.empty() ? meta.setting : xmlt::label_setting_from(o.labels);

    xmlt::EditDistanceIndex index(vocab, cfg.edit_radius);
    auto pre = xmlt::preprocess_dataset(test, vocab, index, cfg.abbreviations());
    auto preds = xmlt::predict_dataset(o.out_dir + "/model.bin", meta.model_kind, vocab, pre);
    auto report = xmlt::evaluate_setting(preds.codes, test, setting, meta.setting);
    report.save(o.out_dir + "/report.json");

    std::vector<std::set<std::string>> gold;
    for (const auto& r : test.records) {
        if (setting == xmlt::LabelSetting::rolled) {
            std::set<std::string> rolled;
            for (const auto& c : r.labels) rolled.insert(xmlt::rollup_label(c));
            gold.push_back(std::move(rolled));
        } else {
            gold.push_back(r.labels);
        }
    }
    auto bins = xmlt::frequency_bins(meta.label_space(), cfg.bin_size, preds.codes, gold);
    bins.save_csv(o.out_dir + "/bins.csv");

    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

int cmd_explain(const CommonOpts& o) {
    auto cfg = effective_config(o);
    auto vocab = xmlt::Vocabulary::load(o.out_dir + "/vocab.tsv");
    auto meta = xmlt::read_sidecar(o.out_dir + "/model.bin");
    auto test = xmlt::load_jsonl(o.test_path);
    xmlt::EditDistanceIndex index(vocab, cfg.edit_radius);
    auto pre = xmlt::preprocess_dataset(test, vocab, index, cfg.abbreviations());
    xmlt::explain_dataset(o.out_dir + "/model.bin", meta.model_kind, vocab, test, pre, o.out_dir + "/explain");
    info("explain: reports under " + o.out_dir + "/explain");
    return 0;
}

int cmd_gradcheck() {
    auto suite = xmlt::gradcheck::run_suite();
    std::size_t failed = 0;
    for (const auto& c : suite.checks)
        if (!c.ok) {
            failed++;
            std::cerr << "FAIL " << c.name << " max rel err " << c.max_rel_err << "\n";
        }
    std::cout << (suite.ok ? "gradcheck: all " : "gradcheck: FAILED, ") << suite.checks.size() << " checks"
              << (suite.ok ? " passed" : (", " + std::to_string(failed) + " failing")) << ", max rel err "
              << suite.max_rel_err << "\n";
    return suite.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-label document tagger over large label sets"};
    app.require_subcommand(1);

    CommonOpts o;

    auto* synth = app.add_subcommand("synth", "generate a planted-trigger synthetic corpus");
    add_common(synth, o);
    synth->add_option("--out", o.out_dir, "output directory")->required();

    auto* preprocess = app.add_subcommand("preprocess", "build vocabulary and encode a corpus");
    add_common(preprocess, o);
    preprocess->add_option("--train", o.train_path, "training JSONL")->required();
    preprocess->add_option("--out", o.out_dir, "output directory")->required();
    preprocess->add_option("--labels", o.labels, "label setting: full or rolled");

    auto* stats = app.add_subcommand("stats", "corpus statistics as JSON");
    add_common(stats, o);
    stats->add_option("--train", o.train_path, "corpus JSONL")->required();
    stats->add_option("--out", o.out_dir, "optional output directory");
    stats->add_option("--labels", o.labels, "label setting: full or rolled");

    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(train, o);
    train->add_option("--model", o.model, "linear | cbow | cnn | hagru");
    train->add_option("--labels", o.labels, "label setting: full or rolled");
    train->add_option("--train", o.train_path, "training JSONL")->required();
    train->add_option("--out", o.out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "score a checkpoint on a test set");
    add_common(eval, o);
    eval->add_option("--test", o.test_path, "test JSONL")->required();
    eval->add_option("--out", o.out_dir, "run directory holding model.bin and vocab.tsv")->required();
    eval->add_option("--labels", o.labels, "label setting: full or rolled");

    auto* explain = app.add_subcommand("explain", "write per-document explanation reports");
    add_common(explain, o);
    explain->add_option("--test", o.test_path, "documents JSONL")->required();
    explain->add_option("--out", o.out_dir, "run directory holding model.bin and vocab.tsv")->required();

    app.add_subcommand("gradcheck", "finite-difference gradient suite; nonzero exit on failure");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (preprocess->parsed()) return cmd_preprocess(o);
        if (stats->parsed()) return cmd_stats(o);
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (explain->parsed()) return cmd_explain(o);
        return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
