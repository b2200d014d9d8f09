// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedadapt/rng.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Labelled image collection; pixel values live in [0, 1].
struct Dataset {
    TensorPtr images;  // [S, C, H, W]
    std::vector<int> labels;
    int num_classes = 0;

    int64_t size() const { return images ? images->dim(0) : 0; }
    int channels() const { return images->dim(1); }
    int height() const { return images->dim(2); }
    int width() const { return images->dim(3); }
};

// IDX files as used by MNIST-family datasets: big-endian magic 0x00000803
// (images) / 0x00000801 (labels), dimension extents, then raw bytes.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Quantizes pixels to bytes (round(v*255), clamped) and writes the pair.
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

// Class-conditional oriented gratings plus seeded noise; deterministic per
// seed and separable enough that a small CNN clears 90% accuracy.
Dataset make_synthetic(int num_classes, int samples_per_class, int image_size, uint64_t seed,
                       float noise = 0.08f, int channels = 1);

// Copies the indexed rows into a batch tensor. When noise_var > 0, adds
// Gaussian noise with that variance (fresh draws) and clips to [0, 1].
TensorPtr gather_batch(const Dataset& data, const std::vector<int>& indices, size_t begin,
                       size_t count, double noise_var = 0.0, Rng* rng = nullptr);
std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices,
                               size_t begin, size_t count);

Dataset subset(const Dataset& data, const std::vector<int>& indices);
// Central spatial crop to size x size (used to fit stride-2 stage geometry).
Dataset center_crop(const Dataset& data, int size);
// Stratified split; the second element holds ~test_fraction of each class.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             uint64_t seed);

}  // namespace fedadapt
