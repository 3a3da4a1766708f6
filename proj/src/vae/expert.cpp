#include "lmvae/vae/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::vae {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shapes " + ad::shape_str(a.shape()) + " and " +
                             ad::shape_str(b.shape()) + " differ");
}

ad::MlpNetwork build_encoder(const ExpertConfig& c, Rng& rng) {
    return ad::MlpNetwork(c.input_width,
                          ad::make_layer_specs(c.hidden, c.hidden_activation, 2 * c.latent_width, ad::Activation::Identity),
                          rng);
}

ad::MlpNetwork build_decoder(const ExpertConfig& c, Rng& rng) {
    std::vector<std::size_t> hidden(c.hidden.rbegin(), c.hidden.rend());
    return ad::MlpNetwork(c.latent_width + c.class_count,
                          ad::make_layer_specs(hidden, c.hidden_activation, c.input_width, c.decoder_output), rng);
}

// Decoder input for a forward pass: z, or z ‖ d with a discrete latent.
Tensor decoder_input(const VaeExpert& e, const Tensor& z, const Tensor& d) {
    if (e.class_count() == 0) return z;
    if (!d.defined() || d.shape().size() != 2 || d.cols() != e.class_count() || d.rows() != z.rows())
        throw DimensionError("expert " + std::to_string(e.index()) + ": discrete input must be [" +
                             std::to_string(z.rows()) + ", " + std::to_string(e.class_count()) + "]");
    return ad::concat_cols(z, d);
}

}  // namespace

VaeExpert::VaeExpert(std::size_t index, const ExpertConfig& config, Rng& rng)
    : index_(index), latent_(config.latent_width), classes_(config.class_count) {
    if (config.latent_width == 0 || config.input_width == 0) throw ConfigError("expert widths must be positive");
    encoder_ = build_encoder(config, rng);
    decoder_ = build_decoder(config, rng);
    if (classes_ > 0)
        class_encoder_ = ad::MlpNetwork(config.input_width,
                                        ad::make_layer_specs(config.class_hidden, config.hidden_activation, classes_,
                                                             ad::Activation::Softmax),
                                        rng);
    validate();
}

VaeExpert::VaeExpert(std::size_t index, ad::MlpNetwork encoder, ad::MlpNetwork decoder, std::size_t latent_width,
                     ad::MlpNetwork class_encoder)
    : index_(index), latent_(latent_width), classes_(class_encoder.empty() ? 0 : class_encoder.output_width()),
      encoder_(std::move(encoder)), decoder_(std::move(decoder)), class_encoder_(std::move(class_encoder)) {
    validate();
}

void VaeExpert::validate() const {
    if (encoder_.output_width() != 2 * latent_)
        throw DimensionError("encoder output width " + std::to_string(encoder_.output_width()) + " != 2 * latent " +
                             std::to_string(latent_));
    if (decoder_.input_width() != latent_ + classes_)
        throw DimensionError("decoder input width " + std::to_string(decoder_.input_width()) + " != latent + classes " +
                             std::to_string(latent_ + classes_));
    if (decoder_.output_width() != encoder_.input_width())
        throw DimensionError("decoder output width does not match encoder input width");
    if (!class_encoder_.empty()) {
        if (class_encoder_.input_width() != encoder_.input_width())
            throw DimensionError("class encoder input width does not match encoder input width");
        if (class_encoder_.layers().back().activation != ad::Activation::Softmax)
            throw DimensionError("class encoder must end in a softmax");
    }
}

Encoding VaeExpert::encode(const Tensor& x) const {
    if (x.shape().size() != 2 || x.cols() != encoder_.input_width())
        throw DimensionError("expert " + std::to_string(index_) + ": input " + ad::shape_str(x.shape()) +
                             " does not match encoder width " + std::to_string(encoder_.input_width()));
    auto h = encoder_.forward(x);
    return {ad::slice_cols(h, 0, latent_), ad::slice_cols(h, latent_, 2 * latent_)};
}

Tensor VaeExpert::decode(const Tensor& latent) const { return decoder_.forward(latent); }

Tensor VaeExpert::class_probabilities(const Tensor& x) const {
    if (class_encoder_.empty()) throw ContractError("expert " + std::to_string(index_) + " has no class encoder");
    return class_encoder_.forward(x);
}

void VaeExpert::set_frozen(bool frozen) {
    frozen_ = frozen;
    encoder_.set_trainable(!frozen);
    decoder_.set_trainable(!frozen);
    class_encoder_.set_trainable(!frozen);
}

std::vector<Tensor> VaeExpert::parameters() const {
    auto p = encoder_.parameters();
    for (const auto* net : {&decoder_, &class_encoder_}) {
        auto more = net->parameters();
        p.insert(p.end(), more.begin(), more.end());
    }
    return p;
}

std::vector<Tensor> VaeExpert::trainable_parameters() const {
    std::vector<Tensor> out;
    if (frozen_) return out;
    for (auto& p : parameters())
        if (p.requires_grad()) out.push_back(p);
    return out;
}

double DisentangleSchedule::capacity() const {
    const double t = std::clamp(progress, 0.0, 1.0);
    return c_start + (c_end - c_start) * t;
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    return Tensor::matrix(rows, cols, rng.normals(rows * cols));
}

Tensor reparameterize(const Tensor& u, const Tensor& logvar, const Tensor& noise) {
    same_shape(u, logvar, "reparameterize");
    same_shape(u, noise, "reparameterize");
    return u + noise * ad::exp(ad::scale(logvar, 0.5));
}

Tensor gaussian_kl_per_sample(const Tensor& u, const Tensor& logvar) {
    same_shape(u, logvar, "gaussian_kl");
    auto inner = ad::exp(logvar) + ad::square(u) - logvar;
    return ad::scale(ad::add_scalar(ad::row_sum(inner), -static_cast<double>(u.cols())), 0.5);
}

Tensor gaussian_kl(const Tensor& u, const Tensor& logvar) { return ad::mean(gaussian_kl_per_sample(u, logvar)); }

Tensor gaussian_log_likelihood(const Tensor& x, const Tensor& mean) {
    same_shape(x, mean, "gaussian_log_likelihood");
    const double d = static_cast<double>(x.cols());
    return ad::add_scalar(ad::scale(ad::row_sum(ad::square(x - mean)), -0.5), -0.5 * d * kLog2Pi);
}

Tensor categorical_kl_uniform_per_sample(const Tensor& d_prime) {
    // Σ d' (log d' + log C)
    const double log_c = std::log(static_cast<double>(d_prime.cols()));
    return ad::row_sum(d_prime * ad::add_scalar(ad::log(ad::clamp_min(d_prime, 1e-12)), log_c));
}

ElboTerms elbo_with_discrete(const VaeExpert& expert, const Tensor& x, const Tensor& noise, const Tensor& d,
                             bool with_discrete_kl, double beta_star) {
    if (beta_star < 0) throw ContractError("elbo: beta* must be non-negative");
    auto enc = expert.encode(x);
    auto z = reparameterize(enc.mean, enc.logvar, noise);
    ElboTerms t;
    t.reconstruction = ad::mean(gaussian_log_likelihood(x, expert.decode(decoder_input(expert, z, d))));
    t.kl = gaussian_kl(enc.mean, enc.logvar);
    t.elbo = beta_star == 1.0 ? t.reconstruction - t.kl : t.reconstruction - ad::scale(t.kl, beta_star);
    if (with_discrete_kl && expert.class_count() > 0) {
        t.kl_discrete = ad::mean(categorical_kl_uniform_per_sample(expert.class_probabilities(x)));
        t.elbo = t.elbo - t.kl_discrete;
    }
    return t;
}

ElboTerms elbo(const VaeExpert& expert, const Tensor& x, const Tensor& noise, double beta_star) {
    if (expert.class_count() == 0) return elbo_with_discrete(expert, x, noise, Tensor(), false, beta_star);
    return elbo_with_discrete(expert, x, noise, expert.class_probabilities(x), true, beta_star);
}

std::vector<double> elbo_per_sample(const VaeExpert& expert, const Tensor& x, const Tensor& noise) {
    ad::NoGradGuard guard;
    auto enc = expert.encode(x);
    auto z = reparameterize(enc.mean, enc.logvar, noise);
    Tensor d;
    if (expert.class_count() > 0) d = expert.class_probabilities(x);
    auto per = gaussian_log_likelihood(x, expert.decode(decoder_input(expert, z, d))) -
               gaussian_kl_per_sample(enc.mean, enc.logvar);
    if (d.defined()) per = per - categorical_kl_uniform_per_sample(d);
    return {per.values().begin(), per.values().end()};
}

Tensor disentangled_loss(const VaeExpert& expert, const Tensor& x, const Tensor& noise,
                         const DisentangleSchedule& schedule) {
    if (schedule.progress < 0 || schedule.progress > 1) throw ContractError("schedule progress outside [0, 1]");
    auto terms = elbo(expert, x, noise, 1.0);
    auto gap = ad::abs(ad::add_scalar(terms.kl, -schedule.capacity()));
    return terms.reconstruction - ad::scale(gap, schedule.gamma);
}

Tensor reconstruct(const VaeExpert& expert, const Tensor& x, const Tensor& noise) {
    ad::NoGradGuard guard;
    auto enc = expert.encode(x);
    Tensor d;
    if (expert.class_count() > 0) d = expert.class_probabilities(x);
    auto out = expert.decode(decoder_input(expert, reparameterize(enc.mean, enc.logvar, noise), d));
    std::vector<double> v(out.values().begin(), out.values().end());
    for (auto& p : v) p = std::clamp(p, 0.0, 1.0);
    return Tensor::constant(out.shape(), std::move(v));
}

Tensor reconstruct_mean(const VaeExpert& expert, const Tensor& x) {
    return reconstruct(expert, x, Tensor::zeros({x.rows(), expert.latent_width()}));
}

LogLikelihoodEstimate importance_log_likelihood(const VaeExpert& expert, const Tensor& x, std::size_t draws,
                                                Rng& rng) {
    if (draws == 0) throw ContractError("importance_log_likelihood: draws must be positive");
    if (x.rows() != 1) throw DimensionError("importance_log_likelihood: expects a single sample");
    if (expert.class_count() > 0) throw ContractError("importance_log_likelihood: discrete latents are not marginalised");
    ad::NoGradGuard guard;
    const std::size_t d = expert.latent_width(), width = x.cols();
    auto enc = expert.encode(x);
    auto mu = enc.mean.values();
    auto lv = enc.logvar.values();
    double sum_lv = 0;
    for (double v : lv) sum_lv += v;

    std::vector<double> log_w;
    log_w.reserve(draws);
    constexpr std::size_t kChunk = 512;
    for (std::size_t done = 0; done < draws; done += kChunk) {
        const std::size_t n = std::min(kChunk, draws - done);
        auto eps = rng.normals(n * d);
        std::vector<double> z(n * d), xs(n * width);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t j = 0; j < d; ++j) z[s * d + j] = mu[j] + eps[s * d + j] * std::exp(0.5 * lv[j]);
            std::copy(x.values().begin(), x.values().end(), xs.begin() + static_cast<std::ptrdiff_t>(s * width));
        }
        auto mean = expert.decode(Tensor::matrix(n, d, z));
        auto ll = gaussian_log_likelihood(Tensor::matrix(n, width, std::move(xs)), mean);
        for (std::size_t s = 0; s < n; ++s) {
            double log_prior = 0, log_q = 0;
            for (std::size_t j = 0; j < d; ++j) {
                log_prior += z[s * d + j] * z[s * d + j];
                log_q += eps[s * d + j] * eps[s * d + j];
            }
            log_prior = -0.5 * log_prior - 0.5 * d * kLog2Pi;
            log_q = -0.5 * log_q - 0.5 * sum_lv - 0.5 * d * kLog2Pi;
            log_w.push_back(ll.values()[s] + log_prior - log_q);
        }
    }
    const double mx = *std::max_element(log_w.begin(), log_w.end());
    double s1 = 0, s2 = 0;
    for (double lw : log_w) {
        const double r = std::exp(lw - mx);
        s1 += r;
        s2 += r * r;
    }
    const double n = static_cast<double>(draws);
    const double mean_r = s1 / n;
    const double var_r = std::max(0.0, s2 / n - mean_r * mean_r);
    // delta method: se(log m) = se(m) / m
    return {mx + std::log(mean_r), std::sqrt(var_r / n) / mean_r};
}

double beta_star_at(double progress, double start, double ramp_fraction) {
    if (ramp_fraction <= 0 || progress >= ramp_fraction) return 1.0;
    const double t = std::max(0.0, progress) / ramp_fraction;
    return start + (1.0 - start) * t;
}

}  // namespace lmvae::vae
