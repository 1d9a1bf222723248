#ifndef OSAKD_KNN_HPP
#define OSAKD_KNN_HPP

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "osakd/tensor.hpp"

namespace osakd {

/// A batch's output-space vectors with their hard labels.
struct Embedding {
    Tensor points;           // B x C row-major
    std::vector<int> labels; // B class indices

    std::size_t rows() const { return points.dim(0); }
    std::size_t cols() const { return points.dim(1); }
};

/// Per-batch matrix of estimated posteriors; every entry is a multiple of
/// 1/k and rows sum to 1 exactly. Constant targets for the distillation
/// loss: no gradient flows back through the neighbor search.
struct SoftLabelSet {
    Tensor targets; // B x C
    std::size_t k = 0;
};

/// Indices of the k nearest rows to points[query] by squared Euclidean
/// distance, excluding the query itself. Ties break toward the lower index.
inline std::vector<std::size_t> knn_indices(const Embedding& emb, std::size_t query,
                                            std::size_t k) {
    const std::size_t b = emb.rows();
    const std::size_t c = emb.cols();
    if (k < 1 || k > b - 1)
        throw ConfigError("knn_indices: k=" + std::to_string(k) + " must be in [1, " +
                          std::to_string(b - 1) + "] for a batch of " + std::to_string(b));
    const double* q = emb.points.data() + query * c;
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(b - 1);
    for (std::size_t i = 0; i < b; ++i) {
        if (i == query) continue;
        const double* p = emb.points.data() + i * c;
        double d = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double diff = p[j] - q[j];
            d += diff * diff;
        }
        dist.emplace_back(d, i);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
    return out;
}

/// Posterior estimate for points[query]: component m is the fraction of the
/// k nearest neighbors carrying hard label m.
inline std::vector<double> posterior(const Embedding& emb, std::size_t query, std::size_t k,
                                     std::size_t num_classes) {
    std::vector<double> post(num_classes, 0.0);
    for (std::size_t idx : knn_indices(emb, query, k))
        post[static_cast<std::size_t>(emb.labels[idx])] += 1.0;
    for (double& v : post) v /= static_cast<double>(k);
    return post;
}

/// Soft labels for a whole batch: one posterior per row of probs.
inline SoftLabelSet batch_soft_labels(const Tensor& probs, const std::vector<int>& hard_labels,
                                      std::size_t k) {
    if (probs.rank() != 2)
        throw DimensionError("batch_soft_labels: expected BxC matrix, got " +
                             shape_str(probs.shape()));
    const std::size_t b = probs.dim(0), c = probs.dim(1);
    if (hard_labels.size() != b)
        throw DimensionError("batch_soft_labels: " + std::to_string(hard_labels.size()) +
                             " labels for " + std::to_string(b) + " rows");
    if (b < k + 1)
        throw ConfigError("batch_soft_labels: batch of " + std::to_string(b) +
                          " cannot supply k=" + std::to_string(k) +
                          " neighbors; use a larger batch or smaller k");
    Embedding emb{probs, hard_labels};
    SoftLabelSet out{Tensor(Shape{b, c}), k};
    for (std::size_t i = 0; i < b; ++i) {
        const std::vector<double> post = posterior(emb, i, k, c);
        std::copy(post.begin(), post.end(), out.targets.data() + i * c);
    }
    return out;
}

} // namespace osakd

#endif
