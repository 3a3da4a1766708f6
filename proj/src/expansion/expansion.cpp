#include "lmvae/expansion/expansion.hpp"

#include <algorithm>
#include <cmath>

#include "lmvae/common/errors.hpp"

namespace lmvae::expansion {

namespace {

// Split point of a layer stack: the shared half holds floor(n / 2) layers.
std::size_t shared_layers(const vae::ExpertConfig& c) {
    const std::size_t n = c.hidden.size() + 1;
    if (n < 2) throw ConfigError("expansion mode needs at least one hidden layer to share");
    return n / 2;
}

ad::MlpNetwork slice(const ad::MlpNetwork& net, std::size_t begin, std::size_t end) {
    std::vector<ad::Linear> layers(net.layers().begin() + static_cast<std::ptrdiff_t>(begin),
                                   net.layers().begin() + static_cast<std::ptrdiff_t>(end));
    return ad::MlpNetwork(std::move(layers));
}

struct FullExpert {
    ad::MlpNetwork encoder;
    ad::MlpNetwork decoder;
    ad::MlpNetwork class_encoder;
};

FullExpert build(const vae::ExpertConfig& c, Rng& rng) {
    vae::VaeExpert e(0, c, rng);
    return {e.encoder(), e.decoder(), e.class_encoder()};
}

}  // namespace

ExpansionPool::ExpansionPool(const vae::ExpertConfig& config, double threshold, Rng& rng)
    : config_(config), threshold_(threshold) {
    const std::size_t k = shared_layers(config_);
    auto full = build(config_, rng);
    const std::size_t n = full.encoder.layers().size();
    shared_encoder_ = slice(full.encoder, 0, k);
    shared_decoder_ = slice(full.decoder, n - k, n);
    specific_.push_back({slice(full.encoder, k, n), slice(full.decoder, 0, n - k), full.class_encoder});
}

ExpansionPool::ExpansionPool(const vae::ExpertConfig& config, double threshold, ad::MlpNetwork shared_encoder,
                             ad::MlpNetwork shared_decoder, std::vector<SpecificParts> specific, bool shared_frozen)
    : config_(config), threshold_(threshold), shared_encoder_(std::move(shared_encoder)),
      shared_decoder_(std::move(shared_decoder)), specific_(std::move(specific)) {
    for (std::size_t i = 0; i < specific_.size(); ++i) compose(i);
    if (shared_frozen) freeze_shared();
}

std::size_t ExpansionPool::add_expert(Rng& rng) {
    const std::size_t k = shared_layers(config_);
    auto full = build(config_, rng);
    const std::size_t n = full.encoder.layers().size();
    specific_.push_back({slice(full.encoder, k, n), slice(full.decoder, 0, n - k), full.class_encoder});
    return specific_.size() - 1;
}

const SpecificParts& ExpansionPool::specific(std::size_t index) const {
    if (index >= specific_.size())
        throw RangeError("expert index " + std::to_string(index) + " out of range for a pool of " +
                         std::to_string(specific_.size()));
    return specific_[index];
}

vae::VaeExpert ExpansionPool::compose(std::size_t index) const {
    const auto& s = specific(index);
    return vae::VaeExpert(index, ad::MlpNetwork::chain(shared_encoder_, s.encoder_head),
                          ad::MlpNetwork::chain(s.decoder_head, shared_decoder_), config_.latent_width,
                          s.class_encoder);
}

void ExpansionPool::freeze_shared() {
    shared_frozen_ = true;
    shared_encoder_.set_trainable(false);
    shared_decoder_.set_trainable(false);
}

std::vector<Tensor> ExpansionPool::shared_parameters() const {
    auto p = shared_encoder_.parameters();
    auto d = shared_decoder_.parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

std::vector<Tensor> ExpansionPool::specific_parameters(std::size_t index) const {
    const auto& s = specific(index);
    std::vector<Tensor> p;
    for (const auto* net : {&s.encoder_head, &s.decoder_head, &s.class_encoder}) {
        auto more = net->parameters();
        p.insert(p.end(), more.begin(), more.end());
    }
    return p;
}

std::vector<Tensor> ExpansionPool::trainable_parameters(std::size_t index) const {
    auto p = specific_parameters(index);
    if (!shared_frozen_) {
        auto s = shared_parameters();
        p.insert(p.begin(), s.begin(), s.end());
    }
    return p;
}

double novelty_score(const Tensor& probe, const Tensor& reconstructions) {
    if (probe.shape().size() != 2 || probe.rows() == 0) throw ContractError("novelty score needs a non-empty probe");
    if (reconstructions.shape().size() != 2 || reconstructions.cols() != probe.cols())
        throw DimensionError("probe and reconstructions differ in width");
    if (reconstructions.rows() == 0) throw ContractError("novelty score needs at least one reconstruction");
    const std::size_t n = probe.rows(), m = reconstructions.rows(), d = probe.cols();
    const double* a = probe.values().data();
    const double* b = reconstructions.values().data();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t l = 0; l < m; ++l) {
            double sq = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = a[i * d + k] - b[l * d + k];
                sq += diff * diff;
            }
            row += std::sqrt(sq);
        }
        total += row;
    }
    return total / (static_cast<double>(n) * static_cast<double>(m));
}

double novelty_score(const vae::VaeExpert& expert, const Tensor& probe) {
    return novelty_score(probe, vae::reconstruct_mean(expert, probe));
}

NoveltyReport decide(const std::vector<double>& scores, double threshold, std::size_t expert_count) {
    if (scores.empty()) throw ContractError("expansion decision needs at least one expert");
    NoveltyReport r;
    r.scores = scores;
    const auto it = std::min_element(scores.begin(), scores.end());
    r.min_score = *it;
    r.add_new = r.min_score > threshold;
    r.chosen = r.add_new ? expert_count : static_cast<std::size_t>(it - scores.begin());
    return r;
}

NoveltyReport decide_expansion(const ExpansionPool& pool, const Tensor& probe) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < pool.size(); ++i) scores.push_back(novelty_score(pool.compose(i), probe));
    return decide(scores, pool.threshold(), pool.size());
}

}  // namespace lmvae::expansion
