// Command-line front end: train / eval / flops / selftest.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "osakd/osakd.hpp"
#include "osakd/selftest.hpp"

namespace {

using namespace osakd;

std::string pick_file(const std::string& dir, const std::string& base) {
    namespace fs = std::filesystem;
    const std::string gz = dir + "/" + base + ".gz";
    if (fs::exists(gz)) return gz;
    const std::string raw = dir + "/" + base;
    if (fs::exists(raw)) return raw;
    throw IoError("missing dataset file " + base + "[.gz] in " + dir);
}

std::string resolve_data_dir(const std::string& flag_value) {
    if (!flag_value.empty())
        return std::filesystem::absolute(flag_value).string();
    if (const char* env = std::getenv("OSAKD_DATA_DIR"))
        return std::filesystem::absolute(env).string();
    throw ConfigError("no data directory: pass --data-dir or set OSAKD_DATA_DIR");
}

struct LoadedData {
    Dataset train;
    Dataset test;
    ModelSpec spec;
};

ModelSpec spec_by_name(const std::string& name);

LoadedData load_for_config(const TrainConfig& cfg) {
    if (cfg.dataset == "fashion") {
        const Dataset train = load_idx(pick_file(cfg.data_dir, "train-images-idx3-ubyte"),
                                       pick_file(cfg.data_dir, "train-labels-idx1-ubyte"), "train");
        const Dataset test = load_idx(pick_file(cfg.data_dir, "t10k-images-idx3-ubyte"),
                                      pick_file(cfg.data_dir, "t10k-labels-idx1-ubyte"), "test");
        return {train, test, cfg.model.empty() ? fashion_spec() : spec_by_name(cfg.model)};
    }
    if (cfg.dataset == "cifar10") {
        return {load_cifar10_bin(cfg.data_dir, "train"), load_cifar10_bin(cfg.data_dir, "test"),
                cfg.model.empty() ? cifar_svhn_spec() : spec_by_name(cfg.model)};
    }
    if (cfg.dataset == "blobs") {
        if (!cfg.model.empty() && cfg.model != "blobs" && cfg.model != "blob_mlp")
            throw ConfigError("dataset blobs trains its own MLP; drop --model " + cfg.model);
        const Dataset train = make_blobs(cfg.blobs_classes, cfg.blobs_per_class, cfg.blobs_dim,
                                         cfg.blobs_separation, cfg.seed + 1, "train");
        const Dataset test = make_blobs(cfg.blobs_classes, cfg.blobs_per_class / 4 + 1,
                                        cfg.blobs_dim, cfg.blobs_separation, cfg.seed + 2, "test");
        return {train, test, blob_mlp(cfg.blobs_dim, 16, cfg.blobs_classes)};
    }
    throw ConfigError("unknown dataset: " + cfg.dataset);
}

ModelSpec spec_by_name(const std::string& name) {
    if (name == "cifar" || name == "cifar_svhn_cnn") return cifar_svhn_spec();
    if (name == "fashion" || name == "fashion_cnn") return fashion_spec();
    throw ConfigError("unknown model: " + name + " (expected cifar|fashion)");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? csv.size() - pos
                                                                           : comma - pos);
        out.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError("--seeds: empty seed list");
    return out;
}

int cmd_train(TrainConfig cfg, const std::string& seeds_csv, bool verbose) {
    if (cfg.dataset != "blobs") cfg.data_dir = resolve_data_dir(cfg.data_dir);
    cfg.validate();
    std::vector<std::uint64_t> seeds =
        seeds_csv.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_seed_list(seeds_csv);

    std::vector<double> best_accs;
    const std::string base_out = cfg.out_dir;
    for (std::uint64_t seed : seeds) {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = seed;
        if (seeds.size() > 1) run_cfg.out_dir = base_out + "/seed" + std::to_string(seed);
        const LoadedData data = load_for_config(run_cfg);
        run_cfg.model = data.spec.name; // manifest records the spec actually trained
        const ExperimentResult res =
            run_experiment(run_cfg, data.spec, data.train, data.test, verbose);
        std::printf("seed %llu: max test accuracy %.4f (metrics: %s)\n",
                    static_cast<unsigned long long>(seed), res.max_test_acc,
                    res.metrics_path.c_str());
        best_accs.push_back(res.max_test_acc);
    }
    if (seeds.size() > 1) {
        double mean = 0.0;
        for (double a : best_accs) mean += a;
        mean /= static_cast<double>(best_accs.size());
        double var = 0.0;
        for (double a : best_accs) var += (a - mean) * (a - mean);
        var /= static_cast<double>(best_accs.size());
        std::printf("mean,std\n%.6f,%.6f\n", mean, std::sqrt(var));
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, TrainConfig cfg, const std::string& split) {
    if (cfg.dataset != "blobs") cfg.data_dir = resolve_data_dir(cfg.data_dir);
    const LoadedData data = load_for_config(cfg);
    const ParamSet params = load_checkpoint(checkpoint, data.spec);
    const double acc = evaluate(data.spec, params, split == "train" ? data.train : data.test);
    std::printf("%s accuracy: %.4f\n", split.c_str(), acc);
    return 0;
}

int cmd_flops(const std::string& model, std::size_t batch_size, const std::string& out_path) {
    const ModelSpec spec = spec_by_name(model);
    const FlopsReport report = count_flops(spec, spec.input_shape);
    const std::string text = format_flops_report(report, batch_size, spec.num_classes);
    std::fputs(text.c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::app);
        if (!f) throw IoError("cannot append FLOPs report to " + out_path);
        f << text;
    }
    return 0;
}

int cmd_selftest() {
    bool all_ok = true;
    for (const SuiteResult& r : run_selftest()) {
        std::printf("%-16s %s%s%s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                    r.detail.empty() ? "" : ": ", r.detail.c_str());
        all_ok = all_ok && r.passed;
    }
    return all_ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online self-acquired knowledge distillation trainer"};
    app.require_subcommand(1);

    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.model.clear(); // empty = pick the dataset's default architecture
    std::string seeds_csv;
    bool verbose = false;

    CLI::App* train = app.add_subcommand("train", "Train a model");
    train->add_option("--dataset", cfg.dataset, "fashion|cifar10|blobs")
        ->check(CLI::IsMember({"fashion", "cifar10", "blobs"}));
    train->add_option("--data-dir", cfg.data_dir, "dataset directory (or OSAKD_DATA_DIR)");
    train->add_option("--model", cfg.model, "model name (defaults to the dataset's)");
    train->add_option("--k", cfg.k, "neighbor count; 0 disables distillation");
    train->add_option("--lambda", cfg.lambda, "cross-entropy weight in [0,1]");
    train->add_option("--epochs", cfg.epochs, "training epochs");
    train->add_option("--batch-size", cfg.batch_size, "mini-batch size");
    train->add_option("--lr", cfg.lr, "learning rate");
    train->add_option("--momentum", cfg.momentum, "heavy-ball momentum");
    train->add_option("--seed", cfg.seed, "RNG seed");
    std::string embedding = "probs";
    train->add_option("--embedding", embedding, "neighbor space: probs|logits")
        ->check(CLI::IsMember({"probs", "logits"}));
    train->add_option("--warmup-epochs", cfg.warmup_epochs, "epochs before distillation starts");
    train->add_option("--subset", cfg.train_subset, "restrict training to the first N samples");
    train->add_option("--out", cfg.out_dir, "output directory");
    train->add_option("--seeds", seeds_csv, "comma list; runs all and reports mean,std");
    train->add_flag("--timing", cfg.record_timing,
                    "record wall-clock per-epoch seconds (breaks byte-reproducibility)");
    train->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");
    train->add_option("--blobs-classes", cfg.blobs_classes, "blobs: class count");
    train->add_option("--blobs-per-class", cfg.blobs_per_class, "blobs: samples per class");
    train->add_option("--blobs-dim", cfg.blobs_dim, "blobs: dimensionality");
    train->add_option("--blobs-sep", cfg.blobs_separation, "blobs: center separation");

    std::string checkpoint, split = "test";
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "model.ckpt path")->required();
    eval->add_option("--dataset", cfg.dataset, "fashion|cifar10|blobs")
        ->check(CLI::IsMember({"fashion", "cifar10", "blobs"}));
    eval->add_option("--data-dir", cfg.data_dir, "dataset directory");
    eval->add_option("--split", split, "test|train")->check(CLI::IsMember({"test", "train"}));
    eval->add_option("--seed", cfg.seed, "blobs data seed");

    std::string flops_model = "fashion";
    std::size_t flops_batch = 64;
    std::string flops_out;
    CLI::App* flops = app.add_subcommand("flops", "Count forward-pass FLOPs");
    flops->add_option("--model", flops_model, "cifar|fashion");
    flops->add_option("--batch-size", flops_batch, "batch size for the k-NN overhead figure");
    flops->add_option("--out", flops_out, "append the CSV section to this file");

    CLI::App* selftest = app.add_subcommand("selftest", "Run built-in validation suites");
    (void)selftest;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    }

    try {
        cfg.embedding = embedding == "logits" ? EmbeddingSpace::Logits : EmbeddingSpace::Probs;
        if (app.got_subcommand("train")) return cmd_train(cfg, seeds_csv, verbose);
        if (app.got_subcommand("eval")) return cmd_eval(checkpoint, cfg, split);
        if (app.got_subcommand("flops")) return cmd_flops(flops_model, flops_batch, flops_out);
        if (app.got_subcommand("selftest")) return cmd_selftest();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
