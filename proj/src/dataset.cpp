// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedadapt {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

uint32_t read_u32_be(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(path + ": truncated while reading " + what);
    }
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_u32_be(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error(images_path + ": cannot open");
    const uint32_t img_magic = read_u32_be(img, images_path, "magic");
    if (img_magic != kImagesMagic) {
        throw std::runtime_error(images_path + ": bad image magic 0x" +
                                 [&] { char b[16]; snprintf(b, sizeof b, "%08x", img_magic); return std::string(b); }());
    }
    const uint32_t count = read_u32_be(img, images_path, "count");
    const uint32_t rows = read_u32_be(img, images_path, "rows");
    const uint32_t cols = read_u32_be(img, images_path, "cols");
    if (count == 0 || rows == 0 || cols == 0) {
        throw std::runtime_error(images_path + ": zero-sized dimension in header");
    }
    std::vector<unsigned char> pixels(static_cast<size_t>(count) * rows * cols);
    if (!img.read(reinterpret_cast<char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size()))) {
        throw std::runtime_error(images_path + ": truncated pixel data, expected " +
                                 std::to_string(pixels.size()) + " bytes");
    }

    std::ifstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw std::runtime_error(labels_path + ": cannot open");
    const uint32_t lbl_magic = read_u32_be(lbl, labels_path, "magic");
    if (lbl_magic != kLabelsMagic) {
        throw std::runtime_error(labels_path + ": bad label magic 0x" +
                                 [&] { char b[16]; snprintf(b, sizeof b, "%08x", lbl_magic); return std::string(b); }());
    }
    const uint32_t lbl_count = read_u32_be(lbl, labels_path, "count");
    if (lbl_count != count) {
        throw std::runtime_error(labels_path + ": " + std::to_string(lbl_count) +
                                 " labels for " + std::to_string(count) + " images");
    }
    std::vector<unsigned char> raw_labels(lbl_count);
    if (!lbl.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<std::streamsize>(raw_labels.size()))) {
        throw std::runtime_error(labels_path + ": truncated label data, expected " +
                                 std::to_string(raw_labels.size()) + " bytes");
    }

    Dataset d;
    d.images = Tensor::create({static_cast<int>(count), 1, static_cast<int>(rows),
                               static_cast<int>(cols)});
    for (size_t i = 0; i < pixels.size(); ++i) {
        d.images->data[i] = static_cast<float>(pixels[i]) / 255.0f;
    }
    d.labels.assign(raw_labels.begin(), raw_labels.end());
    int max_label = 0;
    for (int l : d.labels) max_label = std::max(max_label, l);
    d.num_classes = max_label + 1;
    return d;
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
    if (data.channels() != 1) {
        throw std::invalid_argument("save_idx: only single-channel datasets are representable");
    }
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error(images_path + ": cannot open for writing");
    write_u32_be(img, kImagesMagic);
    write_u32_be(img, static_cast<uint32_t>(data.size()));
    write_u32_be(img, static_cast<uint32_t>(data.height()));
    write_u32_be(img, static_cast<uint32_t>(data.width()));
    for (float v : data.images->data) {
        const float q = std::clamp(std::round(v * 255.0f), 0.0f, 255.0f);
        const unsigned char b = static_cast<unsigned char>(q);
        img.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!img) throw std::runtime_error(images_path + ": write failed");

    std::ofstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw std::runtime_error(labels_path + ": cannot open for writing");
    write_u32_be(lbl, kLabelsMagic);
    write_u32_be(lbl, static_cast<uint32_t>(data.labels.size()));
    for (int l : data.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        lbl.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!lbl) throw std::runtime_error(labels_path + ": write failed");
}

Dataset make_synthetic(int num_classes, int samples_per_class, int image_size, uint64_t seed,
                       float noise, int channels) {
    if (num_classes < 2) {
        throw std::invalid_argument("make_synthetic: need at least 2 classes");
    }
    const int total = num_classes * samples_per_class;
    Dataset d;
    d.num_classes = num_classes;
    d.images = Tensor::create({total, channels, image_size, image_size});
    d.labels.resize(static_cast<size_t>(total));

    Rng class_rng(mix_seed(seed, 0xc1a55));
    std::vector<double> base_phase(static_cast<size_t>(num_classes));
    for (auto& p : base_phase) p = class_rng.uniform() * 6.283185307179586;

    Rng rng(mix_seed(seed, 0x5a3b1e));
    const int spatial = image_size * image_size;
    int s = 0;
    for (int k = 0; k < num_classes; ++k) {
        // One orientation/frequency pair per class.
        const double theta = 3.141592653589793 * k / num_classes;
        const double freq = 1.5 + (k % 3);
        const double fx = freq * std::cos(theta) / image_size;
        const double fy = freq * std::sin(theta) / image_size;
        for (int i = 0; i < samples_per_class; ++i, ++s) {
            const double amp = 0.3 + 0.15 * rng.uniform();
            const double phase = base_phase[k] + 0.3 * (2.0 * rng.uniform() - 1.0);
            float* px = d.images->data.data() + static_cast<int64_t>(s) * channels * spatial;
            for (int c = 0; c < channels; ++c) {
                const double cscale = 1.0 - 0.2 * c;
                for (int y = 0; y < image_size; ++y) {
                    for (int x = 0; x < image_size; ++x) {
                        double v = 0.5 + amp * cscale *
                                             std::sin(6.283185307179586 * (fx * x + fy * y) +
                                                      phase);
                        if (noise > 0.0f) v += noise * rng.normal();
                        px[(c * image_size + y) * image_size + x] =
                            static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            }
            d.labels[static_cast<size_t>(s)] = k;
        }
    }
    return d;
}

TensorPtr gather_batch(const Dataset& data, const std::vector<int>& indices, size_t begin,
                       size_t count, double noise_var, Rng* rng) {
    const int c = data.channels(), h = data.height(), w = data.width();
    const int64_t row = static_cast<int64_t>(c) * h * w;
    auto batch = Tensor::create({static_cast<int>(count), c, h, w});
    const double sd = noise_var > 0.0 ? std::sqrt(noise_var) : 0.0;
    for (size_t i = 0; i < count; ++i) {
        const int src = indices[begin + i];
        const float* from = data.images->data.data() + src * row;
        float* to = batch->data.data() + static_cast<int64_t>(i) * row;
        if (sd > 0.0) {
            for (int64_t j = 0; j < row; ++j) {
                const double v = static_cast<double>(from[j]) + sd * rng->normal();
                to[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        } else {
            std::memcpy(to, from, static_cast<size_t>(row) * sizeof(float));
        }
    }
    return batch;
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<int>& indices,
                               size_t begin, size_t count) {
    std::vector<int> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = data.labels[indices[begin + i]];
    return out;
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
    Dataset d;
    d.num_classes = data.num_classes;
    const int c = data.channels(), h = data.height(), w = data.width();
    const int64_t row = static_cast<int64_t>(c) * h * w;
    d.images = Tensor::create({static_cast<int>(indices.size()), c, h, w});
    d.labels.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        std::memcpy(d.images->data.data() + static_cast<int64_t>(i) * row,
                    data.images->data.data() + indices[i] * row,
                    static_cast<size_t>(row) * sizeof(float));
        d.labels[i] = data.labels[indices[i]];
    }
    return d;
}

Dataset center_crop(const Dataset& data, int size) {
    const int c = data.channels(), h = data.height(), w = data.width();
    if (size > h || size > w) {
        throw std::invalid_argument("center_crop: crop " + std::to_string(size) +
                                    " exceeds image " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    if (size == h && size == w) {
        Dataset d;
        d.num_classes = data.num_classes;
        d.images = data.images->clone();
        d.labels = data.labels;
        return d;
    }
    const int off_y = (h - size) / 2, off_x = (w - size) / 2;
    Dataset d;
    d.num_classes = data.num_classes;
    d.labels = data.labels;
    d.images = Tensor::create({static_cast<int>(data.size()), c, size, size});
    for (int64_t s = 0; s < data.size(); ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const float* src =
                data.images->data.data() + ((s * c + ch) * h + off_y) * w + off_x;
            float* dst = d.images->data.data() + (s * c + ch) * static_cast<int64_t>(size) * size;
            for (int y = 0; y < size; ++y) {
                std::memcpy(dst + static_cast<int64_t>(y) * size, src + static_cast<int64_t>(y) * w,
                            static_cast<size_t>(size) * sizeof(float));
            }
        }
    }
    return d;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw std::invalid_argument("split_train_test: test_fraction must be in [0, 1)");
    }
    std::vector<std::vector<int>> by_class(static_cast<size_t>(data.num_classes));
    for (size_t i = 0; i < data.labels.size(); ++i) {
        by_class[static_cast<size_t>(data.labels[i])].push_back(static_cast<int>(i));
    }
    Rng rng(mix_seed(seed, 0x5817));
    std::vector<int> train_idx, test_idx;
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        const size_t n_test = static_cast<size_t>(std::floor(cls.size() * test_fraction));
        test_idx.insert(test_idx.end(), cls.begin(), cls.begin() + n_test);
        train_idx.insert(train_idx.end(), cls.begin() + n_test, cls.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {subset(data, train_idx), subset(data, test_idx)};
}

}  // namespace fedadapt
