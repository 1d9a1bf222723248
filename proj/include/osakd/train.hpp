#ifndef OSAKD_TRAIN_HPP
#define OSAKD_TRAIN_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "osakd/data.hpp"
#include "osakd/loss.hpp"
#include "osakd/model.hpp"

namespace osakd {

constexpr const char* kVersion = "osakd 1.0.0";

enum class EmbeddingSpace { Probs, Logits };

/// Full experiment configuration. k = 0 disables distillation entirely
/// (baseline cross-entropy training).
struct TrainConfig {
    std::string model = "fashion";
    std::string dataset = "fashion";
    std::string data_dir;
    std::size_t k = 8;
    double lambda = 0.9;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    EmbeddingSpace embedding = EmbeddingSpace::Probs;
    std::size_t warmup_epochs = 0;
    std::size_t train_subset = 0; // 0 = full training set
    std::string out_dir = "runs/default";
    bool record_timing = false; // keeps the metrics CSV byte-reproducible by default

    // blobs dataset knobs
    std::size_t blobs_classes = 3;
    std::size_t blobs_per_class = 500;
    std::size_t blobs_dim = 2;
    double blobs_separation = 6.0;

    void validate() const {
        if (k > 0 && k > batch_size - 1)
            throw ConfigError("k=" + std::to_string(k) + " must be <= batch-size-1 = " +
                              std::to_string(batch_size - 1));
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw ConfigError("lambda=" + std::to_string(lambda) + " outside [0,1]");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("momentum=" + std::to_string(momentum) + " outside [0,1)");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    }
};

/// One per-epoch results row.
struct MetricsRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double ce = 0.0;
    double sd = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;
};

using Velocity = std::vector<Tensor>;

inline Velocity zero_velocity(const ParamSet& params) {
    Velocity v;
    v.reserve(params.size());
    for (const Tensor& p : params.values) v.emplace_back(p.shape());
    return v;
}

/// Heavy-ball momentum: v <- mu*v + g; w <- w - lr*v.
inline void sgd_momentum_step(ParamSet& params, const std::vector<Tensor>& grads,
                              Velocity& velocity, double lr, double momentum) {
    if (grads.size() != params.size() || velocity.size() != params.size())
        throw ContractError("sgd_momentum_step: gradient/velocity count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].all_finite())
            throw NumericError("non-finite gradient for parameter " + params.names[i]);
        Tensor& w = params.values[i];
        Tensor& v = velocity[i];
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < w.numel(); ++j) {
            v[j] = momentum * v[j] + g[j];
            w[j] -= lr * v[j];
        }
    }
}

/// Argmax accuracy; ties resolve to the lowest class index.
inline double evaluate(const ModelSpec& spec, const ParamSet& params, const Dataset& data,
                       std::size_t eval_batch = 250) {
    std::size_t correct = 0;
    const std::size_t n = data.size();
    for (std::size_t start = 0; start < n; start += eval_batch) {
        const std::size_t stop = std::min(n, start + eval_batch);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tape tape;
        const ForwardResult fw = forward(spec, params, data.gather(idx), tape);
        const Tensor& probs = tape.value(fw.probs);
        const std::size_t c = probs.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (probs[i * c + j] > probs[i * c + best]) best = j;
            if (static_cast<int>(best) == data.labels[idx[i]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Called after every optimizer step; used for update-level assertions.
using StepObserver = std::function<void(std::size_t step, const ParamSet& params)>;

/// One pass over the training set: forward, soft labels (when enabled),
/// combined loss, backward, momentum step. Returns the partial metrics row
/// (test accuracy and timing are filled by the caller).
inline MetricsRecord train_epoch(const TrainConfig& cfg, const ModelSpec& spec,
                                 const Dataset& train, ParamSet& params, Velocity& velocity,
                                 std::size_t epoch_index, const StepObserver& observer = {}) {
    cfg.validate();
    const BatchPlan plan = plan_epoch(train.size(), cfg.batch_size, cfg.seed, epoch_index);
    const bool distill = cfg.k > 0 && epoch_index >= cfg.warmup_epochs;

    MetricsRecord rec;
    rec.epoch = epoch_index;
    std::size_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < plan.batches.size(); ++bi) {
        try {
            const std::vector<std::size_t>& idx = plan.batches[bi];
            const Tensor batch = train.gather(idx);
            const std::vector<int> labels = train.gather_labels(idx);

            Tape tape;
            const ForwardResult fw = forward(spec, params, batch, tape);
            const Tensor& probs = tape.value(fw.probs);

            Var loss_node;
            LossValue loss_value;
            if (distill) {
                const Tensor& emb = cfg.embedding == EmbeddingSpace::Probs
                                        ? probs
                                        : tape.value(fw.logits);
                const SoftLabelSet soft = batch_soft_labels(emb, labels, cfg.k);
                const OsakdLoss combined =
                    osakd_loss(tape, fw.probs, labels, soft, cfg.lambda);
                loss_node = combined.node;
                loss_value = combined.value;
            } else {
                loss_node = cross_entropy(tape, fw.probs, labels);
                const double ce = tape.value(loss_node)[0];
                loss_value = LossValue{ce, ce, 0.0, 1.0};
            }

            tape.backward(loss_node);
            std::vector<Tensor> grads;
            grads.reserve(fw.param_vars.size());
            for (Var pv : fw.param_vars) grads.push_back(tape.grad(pv));
            sgd_momentum_step(params, grads, velocity, cfg.lr, cfg.momentum);

            rec.loss += loss_value.total;
            rec.ce += loss_value.ce_part;
            rec.sd += loss_value.sd_part;
            const std::size_t c = probs.dim(1);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t j = 1; j < c; ++j)
                    if (probs[i * c + j] > probs[i * c + best]) best = j;
                if (static_cast<int>(best) == labels[i]) ++correct;
            }
            seen += idx.size();
            if (observer) observer(epoch_index * plan.batches.size() + bi, params);
        } catch (const Error& e) {
            throw Error("epoch " + std::to_string(epoch_index) + " batch " +
                        std::to_string(bi) + ": " + e.what());
        }
    }
    const double nb = static_cast<double>(plan.batches.size());
    rec.loss /= nb;
    rec.ce /= nb;
    rec.sd /= nb;
    rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    return rec;
}

namespace detail {

inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace detail

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write metrics file: " + path);
    f << "epoch,loss,ce,sd,train_acc,test_acc,seconds\n";
    for (const MetricsRecord& r : rows)
        f << r.epoch << ',' << detail::csv_num(r.loss) << ',' << detail::csv_num(r.ce) << ','
          << detail::csv_num(r.sd) << ',' << detail::csv_num(r.train_acc) << ','
          << detail::csv_num(r.test_acc) << ',' << detail::csv_num(r.seconds) << '\n';
}

inline std::string embedding_name(EmbeddingSpace e) {
    return e == EmbeddingSpace::Probs ? "probs" : "logits";
}

inline void write_manifest(const std::string& path, const TrainConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << "version=" << kVersion << "\n"
      << "model=" << cfg.model << "\n"
      << "dataset=" << cfg.dataset << "\n"
      << "data_dir=" << cfg.data_dir << "\n"
      << "k=" << cfg.k << "\n"
      << "lambda=" << detail::csv_num(cfg.lambda) << "\n"
      << "epochs=" << cfg.epochs << "\n"
      << "batch_size=" << cfg.batch_size << "\n"
      << "lr=" << detail::csv_num(cfg.lr) << "\n"
      << "momentum=" << detail::csv_num(cfg.momentum) << "\n"
      << "seed=" << cfg.seed << "\n"
      << "embedding=" << embedding_name(cfg.embedding) << "\n"
      << "warmup_epochs=" << cfg.warmup_epochs << "\n"
      << "train_subset=" << cfg.train_subset << "\n"
      << "record_timing=" << (cfg.record_timing ? 1 : 0) << "\n"
      << "init=he_uniform_fan_in\n"
      << "loss_reduction=mean\n"
      << "conv=valid_stride1\n";
}

struct ExperimentResult {
    std::vector<MetricsRecord> metrics;
    double max_test_acc = 0.0;
    std::string metrics_path;
    std::string checkpoint_path;
};

/// Full experiment: trains for cfg.epochs, evaluating on the test split
/// after every epoch, then writes metrics.csv, manifest.txt, and the final
/// checkpoint under cfg.out_dir. Output paths are validated before any
/// training happens.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const ModelSpec& spec,
                                       const Dataset& train_full, const Dataset& test,
                                       bool verbose = false) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string metrics_path = cfg.out_dir + "/metrics.csv";
    const std::string manifest_path = cfg.out_dir + "/manifest.txt";
    const std::string ckpt_path = cfg.out_dir + "/model.ckpt";
    {
        std::ofstream probe(metrics_path, std::ios::binary);
        if (!probe) throw IoError("output path not writable: " + metrics_path);
    }
    write_manifest(manifest_path, cfg);

    const Dataset train = cfg.train_subset ? train_full.head(cfg.train_subset) : train_full;
    ParamSet params = build(spec, cfg.seed);
    Velocity velocity = zero_velocity(params);

    std::vector<MetricsRecord> rows;
    rows.reserve(cfg.epochs);
    double best = 0.0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        MetricsRecord rec = train_epoch(cfg, spec, train, params, velocity, e);
        rec.test_acc = evaluate(spec, params, test);
        const auto t1 = std::chrono::steady_clock::now();
        if (cfg.record_timing)
            rec.seconds = std::chrono::duration<double>(t1 - t0).count();
        best = std::max(best, rec.test_acc);
        rows.push_back(rec);
        if (verbose)
            std::fprintf(stderr, "epoch %zu loss %.4f ce %.4f sd %.4f train %.4f test %.4f\n",
                         rec.epoch, rec.loss, rec.ce, rec.sd, rec.train_acc, rec.test_acc);
    }
    write_metrics_csv(metrics_path, rows);
    save_checkpoint(ckpt_path, spec, params);
    return ExperimentResult{std::move(rows), best, metrics_path, ckpt_path};
}

} // namespace osakd

#endif
