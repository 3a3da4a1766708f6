#include "lmvae/autodiff/mlp.hpp"

#include <cmath>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::ad {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Tanh: return "tanh";
        case Activation::Logistic: return "logistic";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

Activation parse_activation(const std::string& name) {
    for (auto a : {Activation::Identity, Activation::LeakyRelu, Activation::Tanh, Activation::Logistic,
                   Activation::Softmax})
        if (name == activation_name(a)) return a;
    throw ConfigError("unknown activation '" + name + "'");
}

MlpNetwork::MlpNetwork(std::size_t input_width, const std::vector<LayerSpec>& layers, Rng& rng) {
    std::size_t in = input_width;
    for (const auto& spec : layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + spec.width));
        std::vector<double> w(in * spec.width);
        for (auto& v : w) v = rng.uniform(-limit, limit);
        layers_.push_back(Linear{Tensor::parameter({in, spec.width}, std::move(w)),
                                 Tensor::parameter({spec.width}, std::vector<double>(spec.width, 0.0)),
                                 spec.activation});
        in = spec.width;
    }
    validate();
}

MlpNetwork::MlpNetwork(std::vector<Linear> layers) : layers_(std::move(layers)) { validate(); }

MlpNetwork MlpNetwork::chain(const MlpNetwork& first, const MlpNetwork& second) {
    std::vector<Linear> layers = first.layers_;
    layers.insert(layers.end(), second.layers_.begin(), second.layers_.end());
    return MlpNetwork(std::move(layers));
}

void MlpNetwork::validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.weight.shape().size() != 2 || l.bias.numel() != l.out_width())
            throw DimensionError("layer " + std::to_string(i) + ": malformed weight/bias");
        if (i > 0 && layers_[i - 1].out_width() != l.in_width())
            throw DimensionError("layer " + std::to_string(i) + ": input width " + std::to_string(l.in_width()) +
                                 " does not chain with previous output " +
                                 std::to_string(layers_[i - 1].out_width()));
        if (l.activation == Activation::Softmax && i + 1 != layers_.size())
            throw DimensionError("layer " + std::to_string(i) + ": softmax is only allowed as the final activation");
    }
}

Tensor MlpNetwork::forward(const Tensor& input) const {
    if (input.shape().size() != 2) throw DimensionError("forward: input must be [batch, width]");
    Tensor h = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (h.cols() != l.in_width())
            throw DimensionError("layer " + std::to_string(i) + " expects width " + std::to_string(l.in_width()) +
                                 ", got " + std::to_string(h.cols()));
        h = linear(h, l.weight, l.bias);
        switch (l.activation) {
            case Activation::Identity: break;
            case Activation::LeakyRelu: h = leaky_relu(h); break;
            case Activation::Tanh: h = tanh(h); break;
            case Activation::Logistic: h = sigmoid(h); break;
            case Activation::Softmax: h = softmax_rows(h); break;
        }
    }
    return h;
}

std::size_t MlpNetwork::input_width() const { return layers_.empty() ? 0 : layers_.front().in_width(); }
std::size_t MlpNetwork::output_width() const { return layers_.empty() ? 0 : layers_.back().out_width(); }

std::vector<Tensor> MlpNetwork::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

std::size_t MlpNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.numel() + l.bias.numel();
    return n;
}

void MlpNetwork::set_trainable(bool on) const {
    for (auto& p : parameters()) p.set_requires_grad(on);
}

MlpNetwork MlpNetwork::clone() const {
    std::vector<Linear> copy;
    for (const auto& l : layers_) {
        auto w = Tensor::constant(l.weight.shape(), {l.weight.values().begin(), l.weight.values().end()});
        auto b = Tensor::constant(l.bias.shape(), {l.bias.values().begin(), l.bias.values().end()});
        w.set_requires_grad(l.weight.requires_grad());
        b.set_requires_grad(l.bias.requires_grad());
        copy.push_back(Linear{w, b, l.activation});
    }
    return MlpNetwork(std::move(copy));
}

std::vector<LayerSpec> make_layer_specs(const std::vector<std::size_t>& hidden, Activation hidden_activation,
                                        std::size_t output_width, Activation output_activation) {
    std::vector<LayerSpec> specs;
    for (auto w : hidden) specs.push_back({w, hidden_activation});
    specs.push_back({output_width, output_activation});
    return specs;
}

}  // namespace lmvae::ad
