#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmvae/autodiff/tensor.hpp"
#include "lmvae/common/rng.hpp"

namespace lmvae::data {

using ad::Tensor;

/// Pixels are stored as 8-bit levels k and exposed as k / 255, so every
/// dataset is exactly representable on disk and inversion is exact.
struct Split {
    std::size_t count = 0;
    std::vector<std::uint8_t> pixels;  // [count, sample_width]
    std::vector<std::uint8_t> labels;  // [count] or empty
};

enum class Part { Train, Test };

struct TaskDataset {
    std::string name;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::size_t class_count = 0;  // 0 when unlabeled
    Split train;
    Split test;

    std::size_t sample_width() const { return height * width * channels; }
    bool has_labels() const { return class_count > 0; }
    const Split& split(Part p) const { return p == Part::Train ? train : test; }

    /// Rows of `part` as a [n, D] tensor in [0, 1].
    Tensor rows(Part part, std::span<const std::size_t> indices) const;
    Tensor all(Part part) const;
    std::vector<std::size_t> labels(Part part, std::span<const std::size_t> indices) const;

    /// Throws ContractError on broken invariants.
    void validate() const;
};

bool operator==(const TaskDataset& a, const TaskDataset& b);

struct TaskSequence {
    std::string name;
    std::vector<std::shared_ptr<const TaskDataset>> tasks;
    std::vector<std::size_t> epochs;        // per task
    std::vector<std::size_t> label_budget;  // per task, semi-supervised mode

    std::size_t size() const { return tasks.size(); }
    void validate() const;
};

// ---- IDX ----

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes, const std::string& context = "idx images");
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes,
                                           const std::string& context = "idx labels");
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

/// One split from IDX files. Labels are optional; their count must match.
TaskDataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path = std::nullopt,
                     std::size_t class_count = 10);
/// Train and test splits, keeping the first `max_train` / `max_test` samples (0 keeps all).
TaskDataset load_idx_task(const std::string& name, const std::string& dir, const std::string& prefix,
                          std::size_t max_train = 0, std::size_t max_test = 0);

// ---- LMV1 container ----

std::vector<std::uint8_t> encode_lmv1(const TaskDataset& ds);
TaskDataset decode_lmv1(std::span<const std::uint8_t> bytes, const std::string& context = "lmv1");
void save_lmv1(const std::string& path, const TaskDataset& ds);
TaskDataset load_lmv1(const std::string& path);

// ---- synthetic tasks ----

enum class Generator { GaussianBlobs, Stripes, Checkers, Invert, PermutePixels, Rotate90 };

Generator parse_generator(const std::string& id);
const char* generator_name(Generator g);

struct SynthSpec {
    Generator generator = Generator::GaussianBlobs;
    std::uint64_t seed = 0;
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t classes = 10;
    double noise = 0.1;       // per-pixel standard deviation
    double separation = 0.0;  // > 0: noise = (min class-mean distance) / separation
    std::shared_ptr<const TaskDataset> base;  // transform generators only
};

TaskDataset synthesize_task(const SynthSpec& spec);

// ---- splitting and batching ----

struct SemiSupervisedSplit {
    std::vector<std::size_t> labeled;    // train indices
    std::vector<std::size_t> unlabeled;  // train indices
};

/// Class-stratified: per-class labeled counts differ by at most one
/// unless a class runs out of samples.
SemiSupervisedSplit split_semi_supervised(const TaskDataset& ds, std::size_t labeled_count, std::uint64_t seed);

/// Pure function of (n, seed, epoch).
std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);
/// Consecutive chunks of `order`; the last may be short.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size);

}  // namespace lmvae::data
