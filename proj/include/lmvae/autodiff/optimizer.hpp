#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lmvae/autodiff/tensor.hpp"

namespace lmvae::ad {

class Optimizer {
public:
    explicit Optimizer(double learning_rate);
    virtual ~Optimizer() = default;

    /// Throws ContractError if `p` is already registered.
    void add_parameter(const Tensor& p);
    void add_parameters(std::span<const Tensor> ps);

    /// Allocates and zeroes every registered gradient.
    void zero_grad();
    /// Applies one update and zeroes the gradients. Every registered
    /// parameter must carry a gradient.
    void step();

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr);
    std::size_t step_count() const { return steps_; }
    const std::vector<Tensor>& parameters() const { return params_; }

protected:
    virtual void on_register(const Tensor& p) = 0;
    virtual void update(std::size_t i, Node& n) = 0;

    double lr_;
    std::vector<Tensor> params_;
    std::size_t steps_ = 0;
};

/// Plain SGD with optional heavy-ball momentum:
///   v <- momentum * v + g;  p <- p - lr * v
class SgdOptimizer : public Optimizer {
public:
    explicit SgdOptimizer(double learning_rate, double momentum = 0.0);
    double momentum() const { return momentum_; }

private:
    void on_register(const Tensor& p) override;
    void update(std::size_t i, Node& n) override;

    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

/// Adam with bias-corrected moments.
class AdamOptimizer : public Optimizer {
public:
    explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

private:
    void on_register(const Tensor& p) override;
    void update(std::size_t i, Node& n) override;

    double b1_, b2_, eps_;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace lmvae::ad
