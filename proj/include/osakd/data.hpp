#ifndef OSAKD_DATA_HPP
#define OSAKD_DATA_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>
#include <zlib.h>

#include "osakd/tensor.hpp"

namespace osakd {

/// Immutable dataset: images scaled to [0,1], labels as class indices.
struct Dataset {
    Tensor images; // N x sample-shape
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split;

    std::size_t size() const { return labels.size(); }

    Shape sample_shape() const {
        Shape s(images.shape().begin() + 1, images.shape().end());
        return s;
    }

    /// Copies the samples at the given indices into a batch tensor.
    Tensor gather(const std::vector<std::size_t>& indices) const {
        const std::size_t stride = images.numel() / size();
        Shape shape = images.shape();
        shape[0] = indices.size();
        Tensor out(shape);
        for (std::size_t i = 0; i < indices.size(); ++i)
            std::copy(images.data() + indices[i] * stride,
                      images.data() + (indices[i] + 1) * stride, out.data() + i * stride);
        return out;
    }

    std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const {
        std::vector<int> out(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
        return out;
    }

    /// First n samples as a new dataset (for desk-scale subset runs).
    Dataset head(std::size_t n) const {
        if (n == 0 || n >= size()) return *this;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return Dataset{gather(idx), gather_labels(idx), num_classes, split};
    }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                      std::istreambuf_iterator<char>());
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
    std::vector<unsigned char> out;
    out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("zlib init failed");
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::size_t written = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        if (written == out.size()) out.resize(out.size() * 2);
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("corrupt gzip stream");
        }
        written = out.size() - zs.avail_out;
    }
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

/// Reads a file, transparently decompressing a gzip container.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
    return bytes;
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

} // namespace detail

/// Loads an IDX image/label file pair (optionally gzipped). Pixels are
/// scaled by 1/255; label values define the class count as max+1 (10 for
/// the standard sets).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split = "train") {
    const std::vector<unsigned char> img = detail::read_maybe_gzip(images_path);
    const std::vector<unsigned char> lab = detail::read_maybe_gzip(labels_path);
    if (img.size() < 16 || detail::be32(img.data()) != 0x00000803)
        throw FormatError("bad IDX image magic in " + images_path);
    if (lab.size() < 8 || detail::be32(lab.data()) != 0x00000801)
        throw FormatError("bad IDX label magic in " + labels_path);
    const std::size_t n = detail::be32(img.data() + 4);
    const std::size_t h = detail::be32(img.data() + 8);
    const std::size_t w = detail::be32(img.data() + 12);
    const std::size_t n_lab = detail::be32(lab.data() + 4);
    if (n != n_lab)
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_lab) + " labels");
    if (img.size() != 16 + n * h * w) throw FormatError("truncated IDX image file " + images_path);
    if (lab.size() != 8 + n) throw FormatError("truncated IDX label file " + labels_path);

    Tensor images(Shape{n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i)
        images[i] = static_cast<double>(img[16 + i]) / 255.0;
    std::vector<int> labels(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(lab[8 + i]);
        max_label = std::max(max_label, labels[i]);
    }
    return Dataset{std::move(images), std::move(labels),
                   static_cast<std::size_t>(max_label) + 1, split};
}

/// Loads the CIFAR-10 binary batches from a directory. Train reads
/// data_batch_1..5.bin (whichever exist), test reads test_batch.bin.
/// Each record is 1 label byte + 3072 pixel bytes in R,G,B plane order.
inline Dataset load_cifar10_bin(const std::string& dir_path, const std::string& split = "train") {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) {
            const std::string p = dir_path + "/data_batch_" + std::to_string(i) + ".bin";
            if (fs::exists(p)) files.push_back(p);
        }
    } else {
        const std::string p = dir_path + "/test_batch.bin";
        if (fs::exists(p)) files.push_back(p);
    }
    if (files.empty())
        throw FormatError("no CIFAR-10 " + split + " binaries found in " + dir_path);

    constexpr std::size_t kRecord = 1 + 3072;
    std::vector<unsigned char> bytes;
    for (const std::string& f : files) {
        std::vector<unsigned char> b = detail::read_file_bytes(f);
        if (b.empty() || b.size() % kRecord != 0)
            throw FormatError("CIFAR-10 file length " + std::to_string(b.size()) +
                              " is not a multiple of " + std::to_string(kRecord) + ": " + f);
        bytes.insert(bytes.end(), b.begin(), b.end());
    }
    const std::size_t n = bytes.size() / kRecord;
    Tensor images(Shape{n, 3, 32, 32});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * kRecord;
        if (rec[0] > 9)
            throw FormatError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range");
        labels[i] = rec[0];
        double* dst = images.data() + i * 3072;
        for (std::size_t j = 0; j < 3072; ++j) dst[j] = static_cast<double>(rec[1 + j]) / 255.0;
    }
    return Dataset{std::move(images), std::move(labels), 10, split};
}

/// Isotropic unit-variance Gaussian blobs, one cluster per class, centers
/// spaced `separation` apart along the first axis. Same arguments always
/// produce the same data.
inline Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                          double separation, std::uint64_t seed,
                          const std::string& split = "train") {
    if (num_classes < 2 || dim < 1)
        throw ConfigError("make_blobs: need at least 2 classes and 1 dimension");
    const std::size_t n = num_classes * per_class;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor points(Shape{n, dim});
    std::vector<int> labels(n);
    for (std::size_t c = 0; c < num_classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t row = c * per_class + i;
            double* p = points.data() + row * dim;
            for (std::size_t d = 0; d < dim; ++d) p[d] = gauss(rng);
            p[0] += separation * static_cast<double>(c);
            labels[row] = static_cast<int>(c);
        }
    return Dataset{std::move(points), std::move(labels), num_classes, split};
}

/// One epoch's shuffled batch schedule; the N mod B remainder is dropped so
/// every batch can supply k-NN pools of full size.
struct BatchPlan {
    std::uint64_t seed = 0;
    std::size_t batch_size = 0;
    std::vector<std::vector<std::size_t>> batches;
};

inline BatchPlan plan_epoch(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                            std::size_t epoch_index) {
    if (batch_size < 1) throw ConfigError("plan_epoch: batch size must be >= 1");
    if (batch_size > n)
        throw ConfigError("plan_epoch: batch size " + std::to_string(batch_size) +
                          " exceeds dataset size " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{seed, static_cast<std::uint64_t>(epoch_index)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    BatchPlan plan{seed, batch_size, {}};
    const std::size_t num_batches = n / batch_size;
    plan.batches.reserve(num_batches);
    for (std::size_t b = 0; b < num_batches; ++b)
        plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                                  order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
    return plan;
}

} // namespace osakd

#endif
