#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lmvae/common/rng.hpp"
#include "lmvae/vae/expert.hpp"

namespace lmvae::mixture {

using ad::Tensor;
using vae::VaeExpert;

inline constexpr double kWeightCutoff = 1e-6;

enum class SelectionMode : std::uint8_t { Deterministic = 0, Sampling = 1 };

/// Gate state of a fixed-K mixture. `assignment` is c, `previous` is c'
/// (the snapshot taken at the last task switch).
class MixtureState {
public:
    MixtureState() = default;
    MixtureState(std::vector<VaeExpert> experts, double floor_e = 1e-3, double penalty_u = 1e6);

    std::size_t size() const { return experts_.size(); }
    VaeExpert& expert(std::size_t i);
    const VaeExpert& expert(std::size_t i) const;
    std::vector<VaeExpert>& experts() { return experts_; }
    const std::vector<VaeExpert>& experts() const { return experts_; }

    const std::vector<std::uint8_t>& assignment() const { return c_; }
    const std::vector<std::uint8_t>& previous() const { return c_prev_; }
    std::size_t consumed() const { return consumed_; }
    const std::vector<double>& dirichlet() const { return a_; }
    const std::vector<double>& weights() const { return w_; }
    double floor_e() const { return e_; }
    double penalty_u() const { return u_; }

    /// Rejects vectors off the simplex.
    void set_weights(std::vector<double> w);
    void set_dirichlet(std::vector<double> a);
    /// c' <- c, taken at a task switch before assignment probabilities are computed.
    void snapshot();
    /// c_j <- 1 and K' + 1; other entries are restored from c'.
    void consume(std::size_t j);
    void freeze_expert(std::size_t j);

    /// Raw restore for checkpoints; validates the invariants.
    void restore(std::vector<std::uint8_t> c, std::vector<std::uint8_t> c_prev, std::vector<double> a,
                 std::vector<double> w);

private:
    std::vector<VaeExpert> experts_;
    std::vector<std::uint8_t> c_;
    std::vector<std::uint8_t> c_prev_;
    std::vector<double> a_;
    std::vector<double> w_;
    std::size_t consumed_ = 0;
    double e_ = 1e-3;
    double u_ = 1e6;
};

struct SelectionReport {
    std::vector<double> elbo;      // per-expert mean ELBO
    std::vector<double> p_assign;  // assignment probabilities, empty for inference reports
    std::vector<double> v_select;  // selection probabilities, empty for assignment reports
    std::size_t chosen = 0;
};

using ExpertObjective = std::function<Tensor(const VaeExpert&)>;

/// Σ w_i f(expert_i) / Σ w_i over experts with w_i above the cutoff.
Tensor weighted_objective(const MixtureState& state, const ExpertObjective& objective);

Tensor melbo(const MixtureState& state, const Tensor& x, const Tensor& noise, double beta_star = 1.0);

/// Per-expert, per-sample ELBO (no graph); result[i][b]. One noise batch
/// is shared by all experts.
std::vector<std::vector<double>> score_experts(const MixtureState& state, const Tensor& x, const Tensor& noise);

/// Assignment probabilities softmax(-L') for one vector of ELBOs, in log-space.
/// Experts consumed in c' get L' = -log(e^-L + u).
std::vector<double> assignment_probabilities(const std::vector<double>& elbo, const std::vector<std::uint8_t>& c_prev,
                                             double penalty_u);

/// Assignment probabilities averaged over evaluation batches. Uses c' from the state.
SelectionReport assignment_probabilities(const MixtureState& state, const std::vector<Tensor>& batches, Rng& rng);

/// Snapshot, assignment probabilities, then consume the argmax. The argmax runs over experts that were
/// free in c'; ties go to the lowest index.
SelectionReport select_and_freeze(MixtureState& state, const std::vector<Tensor>& batches, Rng& rng);

/// a_i = e for consumed experts; free experts share 1 - e K' equally.
std::vector<double> dirichlet_parameters(const std::vector<std::uint8_t>& c, double floor_e);
std::vector<double> dirichlet_parameters(const MixtureState& state);

/// Gamma(a_i, 1) draws normalised by their sum.
std::vector<double> sample_mixing_weights(const std::vector<double>& a, Rng& rng);

/// Selection probabilities softmax(-1/L) on a vector of ELBOs. `rng` is required in sampling mode.
SelectionReport inference_selection(const std::vector<double>& elbo, SelectionMode mode = SelectionMode::Deterministic,
                                    Rng* rng = nullptr);

SelectionReport select_expert_for_inference(const MixtureState& state, const Tensor& x, const Tensor& noise,
                                            SelectionMode mode = SelectionMode::Deterministic, Rng* rng = nullptr);

/// Per-sample inference routing: chosen expert for each row of x.
std::vector<std::size_t> route_samples(const MixtureState& state, const Tensor& x, const Tensor& noise);

struct TheoremReport {
    bool passed = false;
    std::vector<double> elbo;        // per-expert batch-mean ELBO
    double weighted = 0.0;           // Σ w_i L_i
    double log_mixture = 0.0;        // log Σ w_i exp(L_i)
    double max_elbo = 0.0;
    double max_margin = 0.0;         // max_elbo - max(weighted, log_mixture), >= 0 on pass
    double lower_margin = 0.0;       // min over experts/samples of log p̂ + 3 se - L
};

/// Numerical check of the mixture bounds on a batch. `draws` importance
/// samples are used per (expert, sample) for the lower-bound side.
TheoremReport theorem_bound_check(const MixtureState& state, const Tensor& x, Rng& rng, std::size_t draws = 2000,
                                  std::size_t max_samples = 4);

}  // namespace lmvae::mixture
