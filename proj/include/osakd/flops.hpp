#ifndef OSAKD_FLOPS_HPP
#define OSAKD_FLOPS_HPP

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "osakd/model.hpp"

namespace osakd {

/// Forward-pass operation counts for one sample. Multiply-adds count as
/// 2 FLOPs; pool and relu count 1 op per output element. Counting is purely
/// structural and independent of parameter values.
struct FlopsReport {
    std::vector<std::pair<std::string, std::uint64_t>> per_layer;
    std::uint64_t total = 0;
    Shape input_shape;
};

inline FlopsReport count_flops(const ModelSpec& spec, const Shape& input_shape) {
    ModelSpec probe = spec;
    probe.input_shape = input_shape;
    const std::vector<Shape> shapes = shape_check(probe);
    FlopsReport report;
    report.input_shape = input_shape;
    Shape cur = input_shape;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const Layer& l = spec.layers[li];
        const Shape& out = shapes[li];
        std::uint64_t flops = 0;
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::uint64_t positions = out[1] * out[2];
                const std::uint64_t per_output = 2ULL * cur[0] * l.kernel * l.kernel;
                flops = l.out * positions * per_output + l.out * positions; // + bias adds
                break;
            }
            case LayerKind::Linear:
                flops = 2ULL * cur[0] * l.out + l.out;
                break;
            case LayerKind::MaxPool:
            case LayerKind::ReLU:
                flops = numel_of(out);
                break;
            case LayerKind::Flatten:
                flops = 0;
                break;
        }
        report.per_layer.emplace_back(detail::layer_desc(l), flops);
        report.total += flops;
        cur = out;
    }
    return report;
}

/// Distance multiply-adds one batch of soft labels costs: every sample
/// compares against the B-1 others across C output coordinates.
inline std::uint64_t knn_overhead_madds(std::size_t batch_size, std::size_t num_classes) {
    return static_cast<std::uint64_t>(batch_size) * (batch_size - 1) * num_classes;
}

inline std::string format_flops_report(const FlopsReport& report, std::size_t batch_size,
                                       std::size_t num_classes) {
    std::ostringstream out;
    out << "# forward FLOPs, one sample, input " << shape_str(report.input_shape)
        << " (multiply-add = 2 FLOPs)\n";
    for (const auto& [name, flops] : report.per_layer)
        out << name << "," << flops << "\n";
    out << "total," << report.total << "\n";
    const std::uint64_t madds = knn_overhead_madds(batch_size, num_classes);
    const std::uint64_t batch_flops = report.total * batch_size;
    out << "knn_overhead_madds_per_batch(B=" << batch_size << ")," << madds << "\n";
    out << "knn_overhead_flops_per_batch," << 2 * madds << "\n";
    out << "knn_overhead_ratio," << static_cast<double>(2 * madds) / static_cast<double>(batch_flops)
        << "\n";
    return out.str();
}

} // namespace osakd

#endif
