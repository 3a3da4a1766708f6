#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmvae/common/rng.hpp"
#include "lmvae/vae/expert.hpp"

namespace lmvae::metrics {

using ad::Tensor;

// ---- image quality ----

double mse(std::span<const double> a, std::span<const double> b);
double mse(const Tensor& a, const Tensor& b);

constexpr double kPsnrCap = 100.0;

struct Psnr {
    double db = 0.0;
    bool exact_match = false;  // mse == 0, db holds the cap
};

Psnr psnr(std::span<const double> a, std::span<const double> b);
Psnr psnr(const Tensor& a, const Tensor& b);

struct ImageShape {
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t channels = 1;
    std::size_t size() const { return height * width * channels; }
};

/// Mean SSIM over 8x8 windows at stride 4 (per channel), C1 = 0.01²,
/// C2 = 0.03². Images smaller than a window use one window clipped to the
/// image.
double ssim(std::span<const double> a, std::span<const double> b, const ImageShape& shape);
/// Mean of the per-image SSIM over the rows of two [N, D] batches.
double ssim(const Tensor& a, const Tensor& b, const ImageShape& shape);

// ---- transfer ----

enum class Delta { Mse, Accuracy };

const char* delta_name(Delta d);
Delta parse_delta(const std::string& name);

/// (1/N) Σ δ(x_i, f(x_i)). Mse: per-sample pixel mean of the squared error
/// against the zero-noise reconstruction. Accuracy: argmax of q(d|x)
/// against `labels`.
double transfer_score(const vae::VaeExpert& expert, const Tensor& x, Delta delta,
                      const std::vector<std::size_t>* labels = nullptr);

/// Scores of one expert on one task over training steps.
class TransferCurve {
public:
    TransferCurve() = default;
    TransferCurve(std::size_t task, std::size_t expert, Delta delta) : task_(task), expert_(expert), delta_(delta) {}

    /// Steps must strictly increase.
    void add(std::size_t step, double score);

    std::size_t task() const { return task_; }
    std::size_t expert() const { return expert_; }
    Delta delta() const { return delta_; }
    const std::vector<std::size_t>& steps() const { return steps_; }
    const std::vector<double>& scores() const { return scores_; }

private:
    std::size_t task_ = 0;
    std::size_t expert_ = 0;
    Delta delta_ = Delta::Mse;
    std::vector<std::size_t> steps_;
    std::vector<double> scores_;
};

/// Least-squares non-increasing fit (pool adjacent violators).
std::vector<double> isotonic_nonincreasing(const std::vector<double>& y);

struct TrendCheck {
    bool passed = false;
    double max_deviation = 0.0;  // max |y - fit| relative to the series range
    double drop = 0.0;           // y.front() - y.back()
};

/// A series follows a non-increasing trend when its isotonic fit stays
/// within `slack` of it (relative to the range) and it ends lower than it
/// started.
TrendCheck nonincreasing_trend(const std::vector<double>& y, double slack);

// ---- likelihood ----

struct NllEstimate {
    double nll = 0.0;             // nats per sample
    double standard_error = 0.0;  // Monte-Carlo error over draws; NaN for one draw
    std::size_t draws = 0;
};

/// -ELBO averaged over the rows of x and over `draws` noise batches.
NllEstimate negative_log_likelihood(const vae::VaeExpert& expert, const Tensor& x, std::size_t draws, Rng& rng);

/// Importance-weighted -log p(x) per row, averaged. Gaussian-only experts.
NllEstimate importance_weighted_nll(const vae::VaeExpert& expert, const Tensor& x, std::size_t draws, Rng& rng);

// ---- latent walks ----

/// `steps` decoder outputs along the straight line between the posterior
/// means of xa and xb ([1, D] each). Class experts interpolate d' too.
Tensor latent_interpolate(const vae::VaeExpert& expert, const Tensor& xa, const Tensor& xb, std::size_t steps);

/// Posterior mean of x with coordinate `dim` swept over [lo, hi].
Tensor latent_traverse(const vae::VaeExpert& expert, const Tensor& x, std::size_t dim, std::size_t steps,
                       double lo = -3.0, double hi = 3.0);

// ---- image files ----

/// Binary PGM (one channel) or PPM (three channels), maxval 255, laying the
/// rows of `images` out in a grid of `columns`.
void write_image_grid(const std::string& path, const Tensor& images, const ImageShape& shape, std::size_t columns);

// ---- report ----

struct TaskMetrics {
    std::string task;
    double nll = 0.0;
    double mse = 0.0;
    Psnr psnr;
    double ssim = 0.0;
    std::optional<double> accuracy;
};

struct EvalReport {
    std::string timestamp;
    std::vector<TaskMetrics> tasks;
    /// routing[t][k]: test samples of task t routed to expert k.
    std::vector<std::vector<std::size_t>> routing;

    /// task,metric,value rows, then routing rows as routing_expert_<k>.
    std::string to_csv() const;
    std::string summary() const;
};

std::string utc_timestamp();

}  // namespace lmvae::metrics
