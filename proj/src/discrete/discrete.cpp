#include "lmvae/discrete/discrete.hpp"

#include <algorithm>
#include <cmath>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::discrete {

namespace {

void check_labels(const vae::VaeExpert& e, const Tensor& x, const Tensor& y) {
    if (y.shape().size() != 2 || y.cols() != e.class_count())
        throw ContractError("labels have " + (y.shape().size() == 2 ? std::to_string(y.cols()) : std::string("?")) +
                            " classes, expert " + std::to_string(e.index()) + " has " +
                            std::to_string(e.class_count()));
    if (y.rows() != x.rows()) throw ContractError("label and sample counts differ");
}

}  // namespace

GumbelSample gumbel_softmax(const Tensor& d_prime, double temperature, std::vector<double> noise) {
    if (!(temperature > 0)) throw ConfigError("Gumbel-softmax temperature must be positive");
    if (noise.size() != d_prime.numel()) throw DimensionError("Gumbel noise does not match the probability batch");
    auto g = Tensor::constant(d_prime.shape(), noise);
    auto logits = ad::scale(ad::log(ad::clamp_min(d_prime, 1e-12)) + g, 1.0 / temperature);
    return {ad::softmax_rows(logits), d_prime, std::move(noise), temperature};
}

GumbelSample gumbel_softmax(const Tensor& d_prime, double temperature, Rng& rng) {
    std::vector<double> g(d_prime.numel());
    for (auto& v : g) v = rng.gumbel();
    return gumbel_softmax(d_prime, temperature, std::move(g));
}

double temperature_at(double progress, double start, double end) {
    const double t = std::clamp(progress, 0.0, 1.0);
    return start + (end - start) * t;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    std::vector<double> v(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
        v[i * classes + labels[i]] = 1.0;
    }
    return Tensor::matrix(labels.size(), classes, std::move(v));
}

Tensor cross_entropy(const Tensor& d_prime, const Tensor& y) {
    if (d_prime.shape() != y.shape()) throw DimensionError("cross_entropy: probability and label shapes differ");
    return ad::neg(ad::mean(ad::row_sum(y * ad::log(ad::clamp_min(d_prime, 1e-12)))));
}

vae::ElboTerms supervised_elbo(const vae::VaeExpert& expert, const Tensor& x, const Tensor& noise, double temperature,
                               Rng& rng) {
    auto sample = gumbel_softmax(expert.class_probabilities(x), temperature, rng);
    return vae::elbo_with_discrete(expert, x, noise, sample.d, true);
}

vae::ElboTerms supervised_elbo(const vae::VaeExpert& expert, const Tensor& x, const Tensor& noise, const Tensor& y) {
    check_labels(expert, x, y);
    return vae::elbo_with_discrete(expert, x, noise, y, true);
}

MixtureSupervisedTerms mixture_supervised_loss(const mixture::MixtureState& state, const Tensor& x, const Tensor& y,
                                               const Tensor& noise) {
    MixtureSupervisedTerms t;
    t.elbo = mixture::weighted_objective(
        state, [&](const vae::VaeExpert& e) { return supervised_elbo(e, x, noise, y).elbo; });
    t.cross_entropy = mixture::weighted_objective(state, [&](const vae::VaeExpert& e) {
        check_labels(e, x, y);
        return cross_entropy(e.class_probabilities(x), y);
    });
    return t;
}

Tensor semi_supervised_objective(const mixture::MixtureState& state, const SemiSupervisedBatch& batch, double beta,
                                 const Tensor& noise_labeled, const Tensor& noise_unlabeled, double temperature,
                                 Rng& rng) {
    if (beta < 0) throw ContractError("semi-supervised beta must be non-negative");
    const bool has_labeled = batch.labeled_x.defined() && batch.labeled_x.rows() > 0;
    const bool has_unlabeled = batch.unlabeled_x.defined() && batch.unlabeled_x.rows() > 0;
    if (beta > 0 && !has_labeled) throw ContractError("semi-supervised objective with beta > 0 needs labeled samples");
    Tensor total;
    if (has_unlabeled) {
        const auto& xu = batch.unlabeled_x;
        total = mixture::weighted_objective(state, [&](const vae::VaeExpert& e) {
            auto d = gumbel_softmax(e.class_probabilities(xu), temperature, rng).d;
            return vae::elbo_with_discrete(e, xu, noise_unlabeled, d, false).elbo;
        });
    }
    if (has_labeled && beta > 0) {
        auto sup = mixture::weighted_objective(state, [&](const vae::VaeExpert& e) {
            return supervised_elbo(e, batch.labeled_x, noise_labeled, batch.labeled_y).elbo;
        });
        sup = ad::scale(sup, beta);
        total = total.defined() ? total + sup : sup;
    }
    if (!total.defined()) throw ContractError("semi-supervised objective over an empty batch");
    return total;
}

std::vector<Classification> classify(const mixture::MixtureState& state, const Tensor& x, const Tensor& noise) {
    ad::NoGradGuard guard;
    auto routes = mixture::route_samples(state, x, noise);
    std::vector<Tensor> probs;
    for (const auto& e : state.experts()) probs.push_back(e.class_probabilities(x));
    std::vector<Classification> out(x.rows());
    for (std::size_t b = 0; b < x.rows(); ++b) {
        const auto& p = probs[routes[b]];
        const std::size_t c = p.cols();
        auto row = p.values().subspan(b * c, c);
        out[b].expert = routes[b];
        out[b].probabilities.assign(row.begin(), row.end());
        out[b].label = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

}  // namespace lmvae::discrete
