#pragma once

#include <cstddef>
#include <vector>

#include "lmvae/autodiff/mlp.hpp"
#include "lmvae/autodiff/tensor.hpp"
#include "lmvae/common/rng.hpp"

namespace lmvae::vae {

using ad::Tensor;

struct ExpertConfig {
    std::size_t input_width = 784;
    std::size_t latent_width = 32;
    std::vector<std::size_t> hidden{256};
    std::size_t class_count = 0;  // > 0 adds a class encoder and a discrete decoder input
    std::vector<std::size_t> class_hidden{128};
    ad::Activation hidden_activation = ad::Activation::LeakyRelu;
    ad::Activation decoder_output = ad::Activation::Logistic;
};

struct Encoding {
    Tensor mean;    // [B, d]
    Tensor logvar;  // [B, d]
};

/// One mixture component. The encoder emits mean ‖ log-variance; the
/// decoder maps z (or z ‖ d when class_count > 0) to the pixel mean. With a
/// discrete latent the expert also owns a softmax class encoder q(d|x).
class VaeExpert {
public:
    VaeExpert() = default;
    VaeExpert(std::size_t index, const ExpertConfig& config, Rng& rng);
    VaeExpert(std::size_t index, ad::MlpNetwork encoder, ad::MlpNetwork decoder, std::size_t latent_width,
              ad::MlpNetwork class_encoder = {});

    Encoding encode(const Tensor& x) const;
    Tensor decode(const Tensor& latent) const;
    /// d' = q(d|x), [B, classes]. Requires a class encoder.
    Tensor class_probabilities(const Tensor& x) const;

    std::size_t index() const { return index_; }
    std::size_t latent_width() const { return latent_; }
    std::size_t class_count() const { return classes_; }
    std::size_t input_width() const { return encoder_.input_width(); }
    const ad::MlpNetwork& encoder() const { return encoder_; }
    const ad::MlpNetwork& decoder() const { return decoder_; }
    const ad::MlpNetwork& class_encoder() const { return class_encoder_; }
    bool has_class_encoder() const { return !class_encoder_.empty(); }

    bool frozen() const { return frozen_; }
    /// Freezing clears requires-grad on every parameter, so no optimizer
    /// built afterwards can see them and backward leaves them untouched.
    void set_frozen(bool frozen);

    std::vector<Tensor> parameters() const;
    /// Empty when frozen; otherwise the parameters that require grad.
    std::vector<Tensor> trainable_parameters() const;

private:
    void validate() const;

    std::size_t index_ = 0;
    std::size_t latent_ = 0;
    std::size_t classes_ = 0;
    ad::MlpNetwork encoder_;
    ad::MlpNetwork decoder_;
    ad::MlpNetwork class_encoder_;
    bool frozen_ = false;
};

struct ElboTerms {
    Tensor reconstruction;  // batch mean of log p(x|z[,d]), nats per sample
    Tensor kl;              // batch mean KL on z, nats per sample
    Tensor kl_discrete;     // batch mean KL on d; undefined without a discrete latent
    Tensor elbo;            // reconstruction - beta* KL - KL_d
};

struct DisentangleSchedule {
    double gamma = 4.0;
    double c_start = 0.5;
    double c_end = 25.0;
    double progress = 0.0;

    double capacity() const;
};

/// Standard-normal noise batch.
Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

/// z = u + noise * exp(logvar / 2)
Tensor reparameterize(const Tensor& u, const Tensor& logvar, const Tensor& noise);

/// KL(N(u, exp(logvar)) || N(0, I)) per sample, shape [B].
Tensor gaussian_kl_per_sample(const Tensor& u, const Tensor& logvar);
/// Batch mean of gaussian_kl_per_sample.
Tensor gaussian_kl(const Tensor& u, const Tensor& logvar);

/// Unit-variance Gaussian log-density of x under mean `mean`, per sample.
Tensor gaussian_log_likelihood(const Tensor& x, const Tensor& mean);

/// KL(d' || uniform) per sample, shape [B]. d' is floored at 1e-12.
Tensor categorical_kl_uniform_per_sample(const Tensor& d_prime);

/// ELBO with the discrete decoder input given explicitly. KL_d is taken on
/// the expert's own d' when `with_discrete_kl` is set.
ElboTerms elbo_with_discrete(const VaeExpert& expert, const Tensor& x, const Tensor& noise, const Tensor& d,
                             bool with_discrete_kl, double beta_star = 1.0);

/// For experts with a class encoder the decoder receives d = d' (the
/// noiseless unit-temperature relaxation) and KL_d is included.
ElboTerms elbo(const VaeExpert& expert, const Tensor& x, const Tensor& noise, double beta_star = 1.0);

/// Per-sample ELBO values (no graph), beta* = 1, same conventions as elbo().
std::vector<double> elbo_per_sample(const VaeExpert& expert, const Tensor& x, const Tensor& noise);

/// reconstruction - gamma * |KL - C(progress)|
Tensor disentangled_loss(const VaeExpert& expert, const Tensor& x, const Tensor& noise,
                         const DisentangleSchedule& schedule);

/// Decoder mean clamped to [0, 1]; detached from the graph.
Tensor reconstruct(const VaeExpert& expert, const Tensor& x, const Tensor& noise);
/// Reconstruction through the posterior mean (zero noise).
Tensor reconstruct_mean(const VaeExpert& expert, const Tensor& x);

struct LogLikelihoodEstimate {
    double value = 0.0;
    double standard_error = 0.0;
};

/// log p(x) for one sample by importance sampling with the encoder
/// posterior as proposal. `x` is [1, D].
LogLikelihoodEstimate importance_log_likelihood(const VaeExpert& expert, const Tensor& x, std::size_t draws,
                                                Rng& rng);

/// Linear ramp from `start` to 1 over the first `ramp_fraction` of a task.
double beta_star_at(double progress, double start = 0.01, double ramp_fraction = 0.5);

}  // namespace lmvae::vae
