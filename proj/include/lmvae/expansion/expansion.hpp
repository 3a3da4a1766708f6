#pragma once

#include <cstddef>
#include <vector>

#include "lmvae/autodiff/mlp.hpp"
#include "lmvae/common/rng.hpp"
#include "lmvae/vae/expert.hpp"

namespace lmvae::expansion {

using ad::Tensor;

struct NoveltyReport {
    std::vector<double> scores;
    double min_score = 0.0;
    bool add_new = false;
    std::size_t chosen = 0;  // argmin when updating, the new index when adding
};

/// Expert-specific parameters: encoder head ε'_i, decoder head θ'_i and,
/// with a discrete latent, a private class encoder.
struct SpecificParts {
    ad::MlpNetwork encoder_head;
    ad::MlpNetwork decoder_head;
    ad::MlpNetwork class_encoder;
};

/// Shared sub-encoder (first half of the encoder layers) and sub-decoder
/// (last half of the decoder layers) plus per-expert heads.
class ExpansionPool {
public:
    ExpansionPool() = default;
    ExpansionPool(const vae::ExpertConfig& config, double threshold, Rng& rng);
    /// Restore from stored parts.
    ExpansionPool(const vae::ExpertConfig& config, double threshold, ad::MlpNetwork shared_encoder,
                  ad::MlpNetwork shared_decoder, std::vector<SpecificParts> specific, bool shared_frozen);

    std::size_t size() const { return specific_.size(); }
    double threshold() const { return threshold_; }
    bool shared_frozen() const { return shared_frozen_; }
    const vae::ExpertConfig& config() const { return config_; }

    /// Fresh heads; returns the new index.
    std::size_t add_expert(Rng& rng);
    vae::VaeExpert compose(std::size_t index) const;
    /// Permanent; clears requires-grad on the shared parameters.
    void freeze_shared();

    const ad::MlpNetwork& shared_encoder() const { return shared_encoder_; }
    const ad::MlpNetwork& shared_decoder() const { return shared_decoder_; }
    const SpecificParts& specific(std::size_t index) const;
    std::vector<Tensor> shared_parameters() const;
    std::vector<Tensor> specific_parameters(std::size_t index) const;
    /// Specific parameters of `index`, plus the shared ones until frozen.
    std::vector<Tensor> trainable_parameters(std::size_t index) const;

private:
    vae::ExpertConfig config_;
    double threshold_ = 0.0;
    ad::MlpNetwork shared_encoder_;
    ad::MlpNetwork shared_decoder_;
    std::vector<SpecificParts> specific_;
    bool shared_frozen_ = false;
};

/// Mean Euclidean distance over all (probe, reconstruction) pairs.
double novelty_score(const Tensor& probe, const Tensor& reconstructions);
/// Scores `expert` by its zero-noise reconstructions of the probe.
double novelty_score(const vae::VaeExpert& expert, const Tensor& probe);

/// Add iff min score > threshold; otherwise update the argmin (lowest
/// index on ties).
NoveltyReport decide(const std::vector<double>& scores, double threshold, std::size_t expert_count);
NoveltyReport decide_expansion(const ExpansionPool& pool, const Tensor& probe);

}  // namespace lmvae::expansion
