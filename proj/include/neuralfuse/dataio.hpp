#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neuralfuse/tensor.hpp"

namespace nf {

// Immutable image dataset. Pixels live in [-1, 1] (the same range the input
// transformation clips to), labels in [0, num_classes).
struct Dataset {
    Tensor images;  // [N, C, H, W]
    std::vector<int> labels;
    int num_classes = 0;
    std::string split = "train";

    int size() const { return images.ndim() ? images.dim(0) : 0; }
    std::vector<int> sample_shape() const;  // [C, H, W]

    // Gathers rows into a batch tensor / label vector.
    Tensor gather(const std::vector<int>& indices) const;
    std::vector<int> gather_labels(const std::vector<int>& indices) const;
};

// Standard CIFAR-10 binary archive: data_batch_{1..5}.bin + test_batch.bin,
// 10,000 records each, 3,073 bytes per record (label byte + 3*32*32 pixel
// bytes, planes R,G,B row-major). Pixels map by v/127.5 - 1. Missing or
// size-mismatched files raise FormatError naming the file.
std::pair<Dataset, Dataset> load_cifar10(const std::string& directory);

// Deterministic class-balanced subset; labels are remapped to consecutive
// ids following the order of `classes`. Throws ArgumentError when a class is
// missing or has fewer than `per_class` samples.
Dataset subset(const Dataset& d, const std::vector<int>& classes,
               int per_class, uint64_t seed);

// Synthetic Gaussian-blob classification set for fast deterministic tests.
// Class prototypes depend only on (seed, class), so train/test splits drawn
// with the same seed share prototypes and differ in sampling noise. Image
// size must be >= 8 so two pooling stages stay valid.
Dataset synth_dataset(int num_classes, int n_per_class, int image_size,
                      uint64_t seed, const std::string& split = "train",
                      double noise_std = 0.3);

}  // namespace nf
