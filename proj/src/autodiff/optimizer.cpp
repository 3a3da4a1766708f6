#include "lmvae/autodiff/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lmvae/common/errors.hpp"

namespace lmvae::ad {

Optimizer::Optimizer(double learning_rate) : lr_(learning_rate) {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
}

void Optimizer::set_learning_rate(double lr) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    lr_ = lr;
}

void Optimizer::add_parameter(const Tensor& p) {
    if (std::any_of(params_.begin(), params_.end(), [&](const Tensor& q) { return q.same_node(p); }))
        throw ContractError("parameter registered twice");
    params_.push_back(p);
    on_register(p);
}

void Optimizer::add_parameters(std::span<const Tensor> ps) {
    for (const auto& p : ps) add_parameter(p);
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad())
            throw ContractError("registered parameter " + std::to_string(i) + " has no gradient");
    }
    ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Node& n = params_[i].node();
        update(i, n);
        std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum) : Optimizer(learning_rate), momentum_(momentum) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

void SgdOptimizer::on_register(const Tensor& p) { velocity_.emplace_back(momentum_ > 0.0 ? p.numel() : 0, 0.0); }

void SgdOptimizer::update(std::size_t i, Node& n) {
    if (momentum_ > 0.0) {
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < n.value.size(); ++j) {
            v[j] = momentum_ * v[j] + n.grad[j];
            n.value[j] -= lr_ * v[j];
        }
    } else {
        for (std::size_t j = 0; j < n.value.size(); ++j) n.value[j] -= lr_ * n.grad[j];
    }
}

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double eps)
    : Optimizer(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

void AdamOptimizer::on_register(const Tensor& p) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
}

void AdamOptimizer::update(std::size_t i, Node& n) {
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(b1_, t), c2 = 1.0 - std::pow(b2_, t);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < n.value.size(); ++j) {
        const double g = n.grad[j];
        m[j] = b1_ * m[j] + (1 - b1_) * g;
        v[j] = b2_ * v[j] + (1 - b2_) * g * g;
        n.value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
}

}  // namespace lmvae::ad
