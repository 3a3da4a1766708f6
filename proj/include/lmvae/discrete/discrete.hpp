#pragma once

#include <cstddef>
#include <vector>

#include "lmvae/common/rng.hpp"
#include "lmvae/mixture/mixture.hpp"

namespace lmvae::discrete {

using ad::Tensor;

struct GumbelSample {
    Tensor d;                    // relaxed one-hot, [B, C]
    Tensor d_prime;              // source probabilities
    std::vector<double> noise;   // g, row-major [B, C]
    double temperature = 1.0;
};

/// d_k = softmax((log max(d'_k, 1e-12) + g_k) / T), differentiable in d'.
GumbelSample gumbel_softmax(const Tensor& d_prime, double temperature, std::vector<double> noise);
GumbelSample gumbel_softmax(const Tensor& d_prime, double temperature, Rng& rng);

/// Linear anneal from `start` to `end` over task progress in [0, 1].
double temperature_at(double progress, double start = 1.0, double end = 0.5);

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

/// Batch-mean categorical cross-entropy -Σ y log d'.
Tensor cross_entropy(const Tensor& d_prime, const Tensor& y);

/// Supervised ELBO with d drawn by Gumbel-softmax from the expert's own d'.
vae::ElboTerms supervised_elbo(const vae::VaeExpert& expert, const Tensor& x, const Tensor& noise, double temperature,
                               Rng& rng);
/// Supervised ELBO with labels fed to the decoder; KL_d still uses d'.
vae::ElboTerms supervised_elbo(const vae::VaeExpert& expert, const Tensor& x, const Tensor& noise, const Tensor& y);

struct MixtureSupervisedTerms {
    Tensor elbo;           // Σ w_i supervised ELBO_i, to be maximised
    Tensor cross_entropy;  // Σ w_i η(q_i(d|x), y), to be minimised
};

MixtureSupervisedTerms mixture_supervised_loss(const mixture::MixtureState& state, const Tensor& x, const Tensor& y,
                                               const Tensor& noise);

struct SemiSupervisedBatch {
    Tensor labeled_x;    // [N_l, D], may have zero rows
    Tensor labeled_y;    // [N_l, C] one-hot
    Tensor unlabeled_x;  // [N_u, D], may have zero rows
};

/// L_Mix^SemS(unlabeled, Gumbel d, no KL_d) + beta * L^S(labeled), to be
/// maximised. The cross-entropy step is separate.
Tensor semi_supervised_objective(const mixture::MixtureState& state, const SemiSupervisedBatch& batch, double beta,
                                 const Tensor& noise_labeled, const Tensor& noise_unlabeled, double temperature,
                                 Rng& rng);

struct Classification {
    std::size_t expert = 0;
    std::size_t label = 0;
    std::vector<double> probabilities;
};

/// Routes each row to its inference-time expert and reads that expert's d'.
std::vector<Classification> classify(const mixture::MixtureState& state, const Tensor& x, const Tensor& noise);

}  // namespace lmvae::discrete
