#include "neuralfuse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "neuralfuse/errors.hpp"
#include "neuralfuse/rng.hpp"

namespace nf {

namespace {

constexpr int kCifarImages = 10000;
constexpr int kCifarRecord = 3073;  // label byte + 3*32*32 pixels

// Appends one archive file's records to images/labels. `offset` is the index
// of the first record being filled.
void read_cifar_file(const std::string& path, Tensor& images,
                     std::vector<int>& labels, int offset) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cifar10: missing or unreadable file: " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    const size_t expect = size_t(kCifarImages) * kCifarRecord;
    if (raw.size() != expect) {
        throw FormatError("cifar10: " + path + " has " +
                          std::to_string(raw.size()) + " bytes, expected " +
                          std::to_string(expect));
    }
    const int pixels = kCifarRecord - 1;
    for (int r = 0; r < kCifarImages; ++r) {
        const unsigned char* rec = raw.data() + size_t(r) * kCifarRecord;
        if (rec[0] > 9) {
            throw FormatError("cifar10: " + path + " record " +
                              std::to_string(r) + " has label " +
                              std::to_string(int(rec[0])));
        }
        labels[size_t(offset) + r] = rec[0];
        double* out = images.data.data() + (size_t(offset) + r) * pixels;
        for (int i = 0; i < pixels; ++i) out[i] = rec[1 + i] / 127.5 - 1.0;
    }
}

}  // namespace

std::vector<int> Dataset::sample_shape() const {
    if (images.ndim() != 4) throw StateError("dataset images must be 4-d");
    return {images.dim(1), images.dim(2), images.dim(3)};
}

Tensor Dataset::gather(const std::vector<int>& indices) const {
    if (images.ndim() != 4) throw StateError("dataset images must be 4-d");
    const int n = size();
    std::vector<int> shape = images.shape;
    shape[0] = int(indices.size());
    Tensor out = Tensor::zeros(shape);
    const size_t row = size_t(images.dim(1)) * images.dim(2) * images.dim(3);
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= n)
            throw ArgumentError("gather: index " + std::to_string(idx) +
                                " out of range [0, " + std::to_string(n) + ")");
        std::copy_n(images.data.data() + size_t(idx) * row, row,
                    out.data.data() + i * row);
    }
    return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int>& indices) const {
    std::vector<int> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= int(labels.size()))
            throw ArgumentError("gather_labels: index out of range");
        out[i] = labels[idx];
    }
    return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& directory) {
    Dataset train, test;
    train.split = "train";
    test.split = "test";
    train.num_classes = test.num_classes = 10;

    train.images = Tensor::zeros({5 * kCifarImages, 3, 32, 32});
    train.labels.assign(5 * kCifarImages, 0);
    for (int b = 1; b <= 5; ++b) {
        read_cifar_file(directory + "/data_batch_" + std::to_string(b) + ".bin",
                        train.images, train.labels, (b - 1) * kCifarImages);
    }
    test.images = Tensor::zeros({kCifarImages, 3, 32, 32});
    test.labels.assign(kCifarImages, 0);
    read_cifar_file(directory + "/test_batch.bin", test.images, test.labels, 0);
    return {std::move(train), std::move(test)};
}

Dataset subset(const Dataset& d, const std::vector<int>& classes,
               int per_class, uint64_t seed) {
    if (classes.empty()) throw ArgumentError("subset: no classes requested");
    if (per_class <= 0) throw ArgumentError("subset: per_class must be positive");

    // Deterministically pick per_class row indices for each requested class.
    std::vector<std::vector<int>> picks(classes.size());
    for (size_t c = 0; c < classes.size(); ++c) {
        std::vector<int> rows;
        for (int i = 0; i < d.size(); ++i)
            if (d.labels[i] == classes[c]) rows.push_back(i);
        if (int(rows.size()) < per_class) {
            throw ArgumentError("subset: class " + std::to_string(classes[c]) +
                                " has " + std::to_string(rows.size()) +
                                " samples, need " + std::to_string(per_class));
        }
        Rng rng = (StreamKey(seed) / "subset" / uint64_t(classes[c])).rng();
        for (size_t i = rows.size(); i > 1; --i)
            std::swap(rows[i - 1], rows[rng.uniform_int(0, uint64_t(i) - 1)]);
        rows.resize(per_class);
        picks[c] = std::move(rows);
    }

    // Round-robin across classes so any prefix stays roughly balanced.
    std::vector<int> order;
    std::vector<int> new_labels;
    order.reserve(classes.size() * size_t(per_class));
    for (int i = 0; i < per_class; ++i) {
        for (size_t c = 0; c < classes.size(); ++c) {
            order.push_back(picks[c][i]);
            new_labels.push_back(int(c));
        }
    }

    Dataset out;
    out.images = d.gather(order);
    out.labels = std::move(new_labels);
    out.num_classes = int(classes.size());
    out.split = d.split;
    return out;
}

Dataset synth_dataset(int num_classes, int n_per_class, int image_size,
                      uint64_t seed, const std::string& split,
                      double noise_std) {
    if (num_classes < 2) throw ArgumentError("synth_dataset: need >= 2 classes");
    if (n_per_class < 1) throw ArgumentError("synth_dataset: need >= 1 per class");
    if (image_size < 8)
        throw ArgumentError("synth_dataset: image size must be >= 8");
    if (noise_std < 0) throw ArgumentError("synth_dataset: negative noise");

    const int S = image_size;
    const int n = num_classes * n_per_class;

    // Class prototypes: a few Gaussian blobs with per-channel amplitudes.
    // They depend only on (seed, class), so every split shares them.
    std::vector<Tensor> protos;
    for (int c = 0; c < num_classes; ++c) {
        Rng rng = (StreamKey(seed) / "prototypes" / uint64_t(c)).rng();
        Tensor p = Tensor::zeros({3, S, S});
        const int blobs = 3;
        for (int bidx = 0; bidx < blobs; ++bidx) {
            const double cx = (0.2 + 0.6 * rng.uniform()) * S;
            const double cy = (0.2 + 0.6 * rng.uniform()) * S;
            const double sg = (0.125 + 0.125 * rng.uniform()) * S;
            double amp[3];
            for (double& a : amp) a = 2.0 * rng.uniform() - 1.0;
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    const double g = std::exp(-d2 / (2.0 * sg * sg));
                    for (int ch = 0; ch < 3; ++ch)
                        p.data[(size_t(ch) * S + y) * S + x] += amp[ch] * g;
                }
            }
        }
        double m = 0;
        for (double v : p.data) m = std::max(m, std::abs(v));
        if (m > 0)
            for (double& v : p.data) v *= 0.8 / m;
        protos.push_back(std::move(p));
    }

    Dataset out;
    out.images = Tensor::zeros({n, 3, S, S});
    out.labels.assign(n, 0);
    out.num_classes = num_classes;
    out.split = split;
    const size_t row = size_t(3) * S * S;
    for (int i = 0; i < n; ++i) {
        const int c = i % num_classes;
        out.labels[i] = c;
        Rng rng = (StreamKey(seed) / "sample" / split / uint64_t(i)).rng();
        double* px = out.images.data.data() + size_t(i) * row;
        const double* pr = protos[c].data.data();
        for (size_t j = 0; j < row; ++j) {
            px[j] = std::clamp(pr[j] + noise_std * rng.normal(), -1.0, 1.0);
        }
    }
    return out;
}

}  // namespace nf
