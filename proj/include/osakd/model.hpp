#ifndef OSAKD_MODEL_HPP
#define OSAKD_MODEL_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "osakd/ops.hpp"

namespace osakd {

enum class LayerKind { Conv, MaxPool, ReLU, Flatten, Linear };

struct Layer {
    LayerKind kind;
    std::size_t out = 0;    // Conv: output channels; Linear: output features
    std::size_t kernel = 0; // Conv: square kernel side

    static Layer conv(std::size_t out_channels, std::size_t kernel) {
        return Layer{LayerKind::Conv, out_channels, kernel};
    }
    static Layer max_pool() { return Layer{LayerKind::MaxPool}; }
    static Layer relu() { return Layer{LayerKind::ReLU}; }
    static Layer flatten() { return Layer{LayerKind::Flatten}; }
    static Layer linear(std::size_t out_features) {
        return Layer{LayerKind::Linear, out_features};
    }
};

/// Declarative layer stack; the output of the last layer feeds a softmax
/// over num_classes.
struct ModelSpec {
    std::string name;
    Shape input_shape; // per-sample, e.g. {3,32,32} or {D}
    std::size_t num_classes = 0;
    std::vector<Layer> layers;
};

/// Ordered named parameters; order defines the checkpoint layout.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t size() const { return values.size(); }
    std::size_t total_count() const {
        std::size_t n = 0;
        for (const Tensor& t : values) n += t.numel();
        return n;
    }
};

namespace detail {

inline std::string layer_desc(const Layer& l) {
    switch (l.kind) {
        case LayerKind::Conv:
            return "conv(" + std::to_string(l.out) + "," + std::to_string(l.kernel) + ")";
        case LayerKind::MaxPool: return "maxpool(2,2)";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Linear: return "linear(" + std::to_string(l.out) + ")";
    }
    return "?";
}

} // namespace detail

inline std::string spec_desc(const ModelSpec& spec) {
    std::string d = "in" + shape_str(spec.input_shape) + ";C=" + std::to_string(spec.num_classes);
    for (const Layer& l : spec.layers) d += ";" + detail::layer_desc(l);
    return d;
}

/// FNV-1a over the canonical spec description; stamped into checkpoints.
inline std::uint64_t spec_hash(const ModelSpec& spec) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : spec_desc(spec)) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Verifies that consecutive layer shapes compose and returns the per-layer
/// output shapes (per-sample, batch dimension excluded).
inline std::vector<Shape> shape_check(const ModelSpec& spec) {
    std::vector<Shape> out;
    Shape cur = spec.input_shape;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const Layer& l = spec.layers[li];
        const std::string where =
            spec.name + " layer " + std::to_string(li) + " (" + detail::layer_desc(l) + ")";
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.size() != 3)
                    throw DimensionError(where + ": needs CxHxW input, has " + shape_str(cur));
                if (l.kernel > cur[1] || l.kernel > cur[2])
                    throw DimensionError(where + ": kernel exceeds input " + shape_str(cur));
                cur = {l.out, cur[1] - l.kernel + 1, cur[2] - l.kernel + 1};
                break;
            }
            case LayerKind::MaxPool: {
                if (cur.size() != 3)
                    throw DimensionError(where + ": needs CxHxW input, has " + shape_str(cur));
                if (cur[1] < 2 || cur[2] < 2)
                    throw DimensionError(where + ": input " + shape_str(cur) + " too small");
                cur = {cur[0], cur[1] / 2, cur[2] / 2};
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::Flatten:
                cur = {numel_of(cur)};
                break;
            case LayerKind::Linear: {
                if (cur.size() != 1)
                    throw DimensionError(where + ": needs flat input, has " + shape_str(cur));
                cur = {l.out};
                break;
            }
        }
        out.push_back(cur);
    }
    if (out.empty() || out.back() != Shape{spec.num_classes})
        throw DimensionError(spec.name + ": final layer yields " +
                             shape_str(out.empty() ? cur : out.back()) + ", expected [" +
                             std::to_string(spec.num_classes) + "] classes");
    return out;
}

/// He-uniform fan-in initialization from the given seed; biases start at
/// zero. Same (spec, seed) always yields the same parameters.
inline ParamSet build(const ModelSpec& spec, std::uint64_t seed) {
    const std::vector<Shape> shapes = shape_check(spec);
    std::mt19937_64 rng(seed);
    ParamSet params;
    Shape cur = spec.input_shape;
    std::size_t conv_i = 0, fc_i = 0;
    auto he_uniform = [&rng](Tensor& t, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    };
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const Layer& l = spec.layers[li];
        if (l.kind == LayerKind::Conv) {
            ++conv_i;
            const std::size_t fan_in = cur[0] * l.kernel * l.kernel;
            Tensor w(Shape{l.out, cur[0], l.kernel, l.kernel});
            he_uniform(w, fan_in);
            params.names.push_back("conv" + std::to_string(conv_i) + ".weight");
            params.values.push_back(std::move(w));
            params.names.push_back("conv" + std::to_string(conv_i) + ".bias");
            params.values.push_back(Tensor(Shape{l.out}));
        } else if (l.kind == LayerKind::Linear) {
            ++fc_i;
            const std::size_t fan_in = cur[0];
            Tensor w(Shape{fan_in, l.out});
            he_uniform(w, fan_in);
            params.names.push_back("fc" + std::to_string(fc_i) + ".weight");
            params.values.push_back(std::move(w));
            params.names.push_back("fc" + std::to_string(fc_i) + ".bias");
            params.values.push_back(Tensor(Shape{l.out}));
        }
        cur = shapes[li];
    }
    return params;
}

struct ForwardResult {
    Var logits;
    Var probs;
    std::vector<Var> param_vars; // leaves aligned with ParamSet order
};

/// Runs the spec on a batch, recording onto the caller's tape.
/// batch_input is [B x input_shape...].
inline ForwardResult forward(const ModelSpec& spec, const ParamSet& params,
                             const Tensor& batch_input, Tape& tape) {
    if (batch_input.rank() != spec.input_shape.size() + 1)
        throw DimensionError(spec.name + ": batch input rank " +
                             std::to_string(batch_input.rank()) + " does not match input shape " +
                             shape_str(spec.input_shape));
    for (std::size_t i = 0; i < spec.input_shape.size(); ++i)
        if (batch_input.dim(i + 1) != spec.input_shape[i])
            throw DimensionError(spec.name + ": batch input " + shape_str(batch_input.shape()) +
                                 " does not match input shape " + shape_str(spec.input_shape));

    std::vector<Var> pvars;
    pvars.reserve(params.size());
    for (const Tensor& p : params.values) pvars.push_back(tape.leaf(p));

    Var x = tape.leaf(batch_input);
    bool flat = spec.input_shape.size() == 1;
    if (flat && batch_input.rank() != 2) throw DimensionError(spec.name + ": flat input expected");
    std::size_t pi = 0;
    for (const Layer& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                Var w = pvars[pi++], b = pvars[pi++];
                x = conv2d(tape, x, w, b);
                break;
            }
            case LayerKind::MaxPool: x = maxpool2d(tape, x); break;
            case LayerKind::ReLU: x = relu(tape, x); break;
            case LayerKind::Flatten:
                x = flatten(tape, x);
                flat = true;
                break;
            case LayerKind::Linear: {
                if (!flat) throw DimensionError(spec.name + ": linear layer before flatten");
                Var w = pvars[pi++], b = pvars[pi++];
                x = add_bias(tape, matmul(tape, x, w), b);
                break;
            }
        }
    }
    Var probs = softmax(tape, x);
    return ForwardResult{x, probs, std::move(pvars)};
}

// ---- bundled architectures and the synthetic-task MLP ----

/// Cifar-10 / SVHN net: conv6@5x5, conv16@5x5, fc 128-64-10.
inline ModelSpec cifar_svhn_spec() {
    return ModelSpec{"cifar_svhn_cnn",
                     {3, 32, 32},
                     10,
                     {Layer::conv(6, 5), Layer::relu(), Layer::max_pool(), Layer::conv(16, 5),
                      Layer::relu(), Layer::max_pool(), Layer::flatten(), Layer::linear(128),
                      Layer::relu(), Layer::linear(64), Layer::relu(), Layer::linear(10)}};
}

/// Fashion-MNIST net: conv20@5x5, conv50@5x5, fc 64-10.
inline ModelSpec fashion_spec() {
    return ModelSpec{"fashion_cnn",
                     {1, 28, 28},
                     10,
                     {Layer::conv(20, 5), Layer::relu(), Layer::max_pool(), Layer::conv(50, 5),
                      Layer::relu(), Layer::max_pool(), Layer::flatten(), Layer::linear(64),
                      Layer::relu(), Layer::linear(10)}};
}

/// One-hidden-layer MLP for the synthetic blobs task.
inline ModelSpec blob_mlp(std::size_t dim, std::size_t hidden, std::size_t num_classes) {
    return ModelSpec{"blob_mlp",
                     {dim},
                     num_classes,
                     {Layer::linear(hidden), Layer::relu(), Layer::linear(num_classes)}};
}

// ---- checkpoint container ----

constexpr char kCheckpointMagic[6] = {'O', 'S', 'A', 'K', 'D', '1'};

inline void save_checkpoint(const std::string& path, const ModelSpec& spec,
                            const ParamSet& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t hash = spec_hash(spec);
    const std::uint64_t count = params.total_count();
    f.write(reinterpret_cast<const char*>(&hash), 8);
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (const Tensor& t : params.values)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

inline ParamSet load_checkpoint(const std::string& path, const ModelSpec& spec) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw FormatError("not an OSAKD1 checkpoint: " + path);
    std::uint64_t hash = 0, count = 0;
    f.read(reinterpret_cast<char*>(&hash), 8);
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f) throw FormatError("truncated checkpoint header: " + path);
    if (hash != spec_hash(spec))
        throw FormatError("checkpoint " + path + " was written for a different model spec");
    ParamSet params = build(spec, 0); // shapes/names only; values overwritten below
    if (count != params.total_count())
        throw FormatError("checkpoint parameter count mismatch in " + path);
    for (Tensor& t : params.values) {
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!f) throw FormatError("truncated checkpoint payload: " + path);
    }
    return params;
}

} // namespace osakd

#endif
