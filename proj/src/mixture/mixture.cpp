#include "lmvae/mixture/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::mixture {

namespace {

double log_sum_exp(const std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

void check_simplex(const std::vector<double>& w, std::size_t k) {
    if (w.size() != k) throw DimensionError("weight vector has " + std::to_string(w.size()) + " entries, expected " +
                                            std::to_string(k));
    double total = 0;
    for (double x : w) {
        if (!(x >= 0)) throw ContractError("mixing weight is negative or NaN");
        total += x;
    }
    if (std::fabs(total - 1.0) > 1e-12) throw ContractError("mixing weights do not sum to 1");
}

std::size_t lowest_argmax(const std::vector<double>& v, const std::vector<std::uint8_t>* exclude = nullptr) {
    std::size_t best = v.size();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (exclude && (*exclude)[i]) continue;
        if (best == v.size() || v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace

MixtureState::MixtureState(std::vector<VaeExpert> experts, double floor_e, double penalty_u)
    : experts_(std::move(experts)), e_(floor_e), u_(penalty_u) {
    if (experts_.empty()) throw ContractError("mixture needs at least one expert");
    if (!(floor_e > 0)) throw ConfigError("floor e must be positive");
    if (!(penalty_u > 0)) throw ConfigError("penalty u must be positive");
    const std::size_t k = experts_.size();
    c_.assign(k, 0);
    c_prev_.assign(k, 0);
    a_.assign(k, 1.0 / static_cast<double>(k));
    w_.assign(k, 1.0 / static_cast<double>(k));
}

VaeExpert& MixtureState::expert(std::size_t i) {
    if (i >= experts_.size()) throw RangeError("expert index " + std::to_string(i) + " out of range");
    return experts_[i];
}

const VaeExpert& MixtureState::expert(std::size_t i) const {
    if (i >= experts_.size()) throw RangeError("expert index " + std::to_string(i) + " out of range");
    return experts_[i];
}

void MixtureState::set_weights(std::vector<double> w) {
    check_simplex(w, size());
    w_ = std::move(w);
}

void MixtureState::set_dirichlet(std::vector<double> a) {
    if (a.size() != size()) throw DimensionError("Dirichlet parameter count mismatch");
    for (double x : a)
        if (!(x > 0)) throw ContractError("Dirichlet parameters must be positive");
    a_ = std::move(a);
}

void MixtureState::snapshot() { c_prev_ = c_; }

void MixtureState::consume(std::size_t j) {
    if (j >= size()) throw RangeError("expert index " + std::to_string(j) + " out of range");
    if (c_prev_[j]) throw ContractError("expert " + std::to_string(j) + " is already consumed");
    c_ = c_prev_;
    c_[j] = 1;
    consumed_ = static_cast<std::size_t>(std::count(c_.begin(), c_.end(), std::uint8_t{1}));
}

void MixtureState::freeze_expert(std::size_t j) { expert(j).set_frozen(true); }

void MixtureState::restore(std::vector<std::uint8_t> c, std::vector<std::uint8_t> c_prev, std::vector<double> a,
                           std::vector<double> w) {
    if (c.size() != size() || c_prev.size() != size()) throw DimensionError("assignment vector size mismatch");
    for (std::size_t i = 0; i < size(); ++i)
        if (c_prev[i] && !c[i]) throw ContractError("consumed expert cannot return to free");
    set_dirichlet(std::move(a));
    set_weights(std::move(w));
    c_ = std::move(c);
    c_prev_ = std::move(c_prev);
    consumed_ = static_cast<std::size_t>(std::count(c_.begin(), c_.end(), std::uint8_t{1}));
}

Tensor weighted_objective(const MixtureState& state, const ExpertObjective& objective) {
    if (state.size() == 0) throw ContractError("weighted objective over an empty mixture");
    const auto& w = state.weights();
    Tensor total;
    double norm = 0;
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (w[i] <= kWeightCutoff) continue;
        auto term = ad::scale(objective(state.expert(i)), w[i]);
        total = total.defined() ? total + term : term;
        norm += w[i];
    }
    if (!total.defined()) throw ContractError("every mixing weight is below the cutoff");
    return norm == 1.0 ? total : ad::scale(total, 1.0 / norm);
}

Tensor melbo(const MixtureState& state, const Tensor& x, const Tensor& noise, double beta_star) {
    return weighted_objective(state, [&](const VaeExpert& e) { return vae::elbo(e, x, noise, beta_star).elbo; });
}

std::vector<std::vector<double>> score_experts(const MixtureState& state, const Tensor& x, const Tensor& noise) {
    std::vector<std::vector<double>> out;
    out.reserve(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        auto per = vae::elbo_per_sample(state.expert(i), x, noise);
        for (double v : per)
            if (!std::isfinite(v)) throw ScoringError("expert " + std::to_string(i) + " produced a non-finite ELBO");
        out.push_back(std::move(per));
    }
    return out;
}

std::vector<double> assignment_probabilities(const std::vector<double>& elbo, const std::vector<std::uint8_t>& c_prev,
                                             double penalty_u) {
    if (elbo.size() != c_prev.size()) throw DimensionError("ELBO and assignment vectors differ in length");
    const double log_u = std::log(penalty_u);
    std::vector<double> log_terms(elbo.size());
    for (std::size_t j = 0; j < elbo.size(); ++j) {
        if (!std::isfinite(elbo[j])) throw ScoringError("expert " + std::to_string(j) + " produced a non-finite ELBO");
        const double a = -elbo[j];
        if (!c_prev[j]) {
            log_terms[j] = a;
        } else {
            const double m = std::max(a, log_u);
            log_terms[j] = m + std::log(std::exp(a - m) + std::exp(log_u - m));
        }
    }
    const double norm = log_sum_exp(log_terms);
    std::vector<double> p(elbo.size());
    for (std::size_t j = 0; j < elbo.size(); ++j) p[j] = 1.0 - std::exp(log_terms[j] - norm);
    return p;
}

SelectionReport assignment_probabilities(const MixtureState& state, const std::vector<Tensor>& batches, Rng& rng) {
    if (batches.empty()) throw ContractError("assignment needs at least one evaluation batch");
    const std::size_t k = state.size();
    SelectionReport r;
    r.elbo.assign(k, 0.0);
    r.p_assign.assign(k, 0.0);
    for (const auto& xb : batches) {
        auto noise = vae::standard_normal(xb.rows(), state.expert(0).latent_width(), rng);
        auto scores = score_experts(state, xb, noise);
        std::vector<double> mean(k);
        for (std::size_t i = 0; i < k; ++i)
            mean[i] = std::accumulate(scores[i].begin(), scores[i].end(), 0.0) / static_cast<double>(scores[i].size());
        auto p = assignment_probabilities(mean, state.previous(), state.penalty_u());
        for (std::size_t i = 0; i < k; ++i) {
            r.elbo[i] += mean[i] / static_cast<double>(batches.size());
            r.p_assign[i] += p[i] / static_cast<double>(batches.size());
        }
    }
    return r;
}

SelectionReport select_and_freeze(MixtureState& state, const std::vector<Tensor>& batches, Rng& rng) {
    state.snapshot();
    const auto& prev = state.previous();
    if (std::all_of(prev.begin(), prev.end(), [](std::uint8_t c) { return c == 1; }))
        throw CapacityExhaustedError("every expert is already consumed; use expansion mode or a larger K");
    auto r = assignment_probabilities(state, batches, rng);
    r.chosen = lowest_argmax(r.p_assign, &prev);
    state.consume(r.chosen);
    return r;
}

std::vector<double> dirichlet_parameters(const std::vector<std::uint8_t>& c, double floor_e) {
    const auto k = static_cast<double>(c.size());
    const auto used = static_cast<double>(std::count(c.begin(), c.end(), std::uint8_t{1}));
    if (used >= k) throw ConfigError("no free expert remains for the Dirichlet parameters");
    if (floor_e * used >= 1.0) throw ConfigError("e * K' must stay below 1");
    const double free_a = (1.0 - floor_e * used) / (k - used);
    std::vector<double> a(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) a[i] = c[i] ? floor_e : free_a;
    return a;
}

std::vector<double> dirichlet_parameters(const MixtureState& state) {
    return dirichlet_parameters(state.assignment(), state.floor_e());
}

std::vector<double> sample_mixing_weights(const std::vector<double>& a, Rng& rng) {
    for (double x : a)
        if (!(x > 0)) throw ContractError("Dirichlet parameters must be positive");
    std::vector<double> w(a.size());
    for (int attempt = 0; attempt < 64; ++attempt) {
        double total = 0;
        for (std::size_t i = 0; i < a.size(); ++i) total += (w[i] = rng.gamma(a[i]));
        if (total > 0 && std::isfinite(total)) {
            for (auto& x : w) x /= total;
            return w;
        }
    }
    throw ScoringError("Dirichlet sampling kept producing degenerate draws");
}

SelectionReport inference_selection(const std::vector<double>& elbo, SelectionMode mode, Rng* rng) {
    if (elbo.empty()) throw ContractError("inference selection over no experts");
    SelectionReport r;
    r.elbo = elbo;
    std::vector<double> logits(elbo.size());
    for (std::size_t j = 0; j < elbo.size(); ++j) {
        if (!std::isfinite(elbo[j])) throw ScoringError("expert " + std::to_string(j) + " produced a non-finite ELBO");
        const double l = std::fabs(elbo[j]) < 1e-8 ? elbo[j] - 1e-8 : elbo[j];
        logits[j] = -1.0 / l;
    }
    const double norm = log_sum_exp(logits);
    r.v_select.resize(elbo.size());
    for (std::size_t j = 0; j < elbo.size(); ++j) r.v_select[j] = std::exp(logits[j] - norm);
    if (mode == SelectionMode::Deterministic) {
        r.chosen = lowest_argmax(logits);
    } else {
        if (!rng) throw ContractError("sampling mode needs a random source");
        double u = rng->uniform(), acc = 0;
        r.chosen = elbo.size() - 1;
        for (std::size_t j = 0; j < elbo.size(); ++j) {
            acc += r.v_select[j];
            if (u < acc) {
                r.chosen = j;
                break;
            }
        }
    }
    return r;
}

SelectionReport select_expert_for_inference(const MixtureState& state, const Tensor& x, const Tensor& noise,
                                            SelectionMode mode, Rng* rng) {
    auto scores = score_experts(state, x, noise);
    std::vector<double> mean(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        mean[i] = std::accumulate(scores[i].begin(), scores[i].end(), 0.0) / static_cast<double>(scores[i].size());
    return inference_selection(mean, mode, rng);
}

std::vector<std::size_t> route_samples(const MixtureState& state, const Tensor& x, const Tensor& noise) {
    auto scores = score_experts(state, x, noise);
    std::vector<std::size_t> out(x.rows());
    std::vector<double> column(state.size());
    for (std::size_t b = 0; b < x.rows(); ++b) {
        for (std::size_t i = 0; i < state.size(); ++i) column[i] = scores[i][b];
        out[b] = inference_selection(column).chosen;
    }
    return out;
}

TheoremReport theorem_bound_check(const MixtureState& state, const Tensor& x, Rng& rng, std::size_t draws,
                                  std::size_t max_samples) {
    check_simplex(state.weights(), state.size());
    TheoremReport r;
    const std::size_t k = state.size(), d = state.expert(0).latent_width();
    auto scores = score_experts(state, x, vae::standard_normal(x.rows(), d, rng));
    r.elbo.resize(k);
    for (std::size_t i = 0; i < k; ++i)
        r.elbo[i] = std::accumulate(scores[i].begin(), scores[i].end(), 0.0) / static_cast<double>(x.rows());

    const auto& w = state.weights();
    std::vector<double> log_terms;
    for (std::size_t i = 0; i < k; ++i) {
        r.weighted += w[i] * r.elbo[i];
        if (w[i] > 0) log_terms.push_back(std::log(w[i]) + r.elbo[i]);
    }
    r.log_mixture = log_sum_exp(log_terms);
    r.max_elbo = *std::max_element(r.elbo.begin(), r.elbo.end());
    // Σ w_i = 1 makes both aggregates convex-type means of the L_i.
    const double tol = 1e-9 * std::max(1.0, std::fabs(r.max_elbo));
    r.max_margin = r.max_elbo - std::max(r.weighted, r.log_mixture);

    r.lower_margin = std::numeric_limits<double>::infinity();
    const std::size_t n = std::min(max_samples, x.rows());
    for (std::size_t b = 0; b < n; ++b) {
        std::vector<double> row(x.values().begin() + static_cast<std::ptrdiff_t>(b * x.cols()),
                                x.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * x.cols()));
        auto xb = Tensor::matrix(1, x.cols(), row);
        std::vector<double> rep;
        rep.reserve(draws * row.size());
        for (std::size_t s = 0; s < draws; ++s) rep.insert(rep.end(), row.begin(), row.end());
        auto xs = Tensor::matrix(draws, x.cols(), std::move(rep));
        for (std::size_t i = 0; i < k; ++i) {
            auto lp = vae::importance_log_likelihood(state.expert(i), xb, draws, rng);
            auto per = vae::elbo_per_sample(state.expert(i), xs, vae::standard_normal(draws, d, rng));
            double s1 = 0, s2 = 0;
            for (double v : per) {
                s1 += v;
                s2 += v * v;
            }
            const double mean = s1 / static_cast<double>(draws);
            const double se = std::sqrt(std::max(0.0, s2 / draws - mean * mean) / static_cast<double>(draws));
            r.lower_margin = std::min(r.lower_margin, lp.value + 3.0 * std::hypot(lp.standard_error, se) - mean);
        }
    }
    r.passed = r.max_margin >= -tol && r.lower_margin >= 0;
    return r;
}

}  // namespace lmvae::mixture
