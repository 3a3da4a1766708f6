#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lmvae/autodiff/tensor.hpp"
#include "lmvae/common/rng.hpp"

namespace lmvae::ad {

enum class Activation : std::uint8_t { Identity = 0, LeakyRelu = 1, Tanh = 2, Logistic = 3, Softmax = 4 };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct LayerSpec {
    std::size_t width;
    Activation activation;
};

/// Affine map followed by an activation. `weight` is [in, out], `bias` [out].
struct Linear {
    Tensor weight;
    Tensor bias;
    Activation activation = Activation::Identity;

    std::size_t in_width() const { return weight.shape()[0]; }
    std::size_t out_width() const { return weight.shape()[1]; }
};

/// Stack of affine layers. Copies share parameter storage; use clone() for
/// an independent copy.
class MlpNetwork {
public:
    MlpNetwork() = default;
    /// Glorot-uniform weights, zero biases.
    MlpNetwork(std::size_t input_width, const std::vector<LayerSpec>& layers, Rng& rng);
    explicit MlpNetwork(std::vector<Linear> layers);

    /// `first` then `second`, sharing both parameter sets.
    static MlpNetwork chain(const MlpNetwork& first, const MlpNetwork& second);

    Tensor forward(const Tensor& input) const;

    std::size_t input_width() const;
    std::size_t output_width() const;
    const std::vector<Linear>& layers() const { return layers_; }
    bool empty() const { return layers_.empty(); }

    /// Weight and bias of every layer, in layer order.
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    void set_trainable(bool on) const;

    MlpNetwork clone() const;

private:
    void validate() const;
    std::vector<Linear> layers_;
};

inline Tensor forward(const MlpNetwork& net, const Tensor& input) { return net.forward(input); }

/// Hidden layers with `hidden_activation`, then one output layer.
std::vector<LayerSpec> make_layer_specs(const std::vector<std::size_t>& hidden, Activation hidden_activation,
                                        std::size_t output_width, Activation output_activation);

}  // namespace lmvae::ad
