#include "lmvae/autodiff/serialize.hpp"

#include <algorithm>

#include "lmvae/common/errors.hpp"

namespace lmvae::ad {

namespace {
constexpr char kMagic[4] = {'L', 'M', 'V', 'P'};
}

void write_networks(ByteWriter& out, std::span<const NamedNetwork> networks) {
    out.raw(std::string_view(kMagic, 4));
    out.u32(kParameterStreamVersion);
    out.u32(static_cast<std::uint32_t>(networks.size()));
    for (const auto& nn : networks) {
        out.str(nn.name);
        out.u32(static_cast<std::uint32_t>(nn.network.input_width()));
        out.u32(static_cast<std::uint32_t>(nn.network.layers().size()));
        for (const auto& l : nn.network.layers()) {
            out.u32(static_cast<std::uint32_t>(l.out_width()));
            out.u8(static_cast<std::uint8_t>(l.activation));
        }
    }
    for (const auto& nn : networks) {
        for (const auto& l : nn.network.layers()) {
            out.f64s(l.weight.values());
            out.f64s(l.bias.values());
        }
    }
}

std::vector<NamedNetwork> read_networks(ByteReader& in) {
    auto magic = in.raw(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) in.fail("bad parameter stream magic");
    if (auto v = in.u32(); v != kParameterStreamVersion) in.fail("unsupported parameter stream version " + std::to_string(v));
    const auto count = in.u32();

    struct Manifest {
        std::string name;
        std::size_t input;
        std::vector<LayerSpec> layers;
    };
    std::vector<Manifest> manifest;
    for (std::uint32_t i = 0; i < count; ++i) {
        Manifest m;
        m.name = in.str();
        m.input = in.u32();
        const auto layers = in.u32();
        for (std::uint32_t j = 0; j < layers; ++j) {
            const auto width = in.u32();
            const auto act = in.u8();
            if (act > static_cast<std::uint8_t>(Activation::Softmax)) in.fail("unknown activation tag");
            m.layers.push_back({width, static_cast<Activation>(act)});
        }
        manifest.push_back(std::move(m));
    }

    std::vector<NamedNetwork> out;
    for (const auto& m : manifest) {
        std::vector<Linear> layers;
        std::size_t in_width = m.input;
        for (const auto& spec : m.layers) {
            std::vector<double> w(in_width * spec.width), b(spec.width);
            for (auto& v : w) v = in.f64();
            for (auto& v : b) v = in.f64();
            layers.push_back(Linear{Tensor::parameter({in_width, spec.width}, std::move(w)),
                                    Tensor::parameter({spec.width}, std::move(b)), spec.activation});
            in_width = spec.width;
        }
        out.push_back({m.name, MlpNetwork(std::move(layers))});
    }
    return out;
}

void assign_parameters(const MlpNetwork& target, const MlpNetwork& source) {
    auto t = target.parameters();
    auto s = source.parameters();
    if (t.size() != s.size()) throw DimensionError("assign_parameters: layer counts differ");
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].shape() != s[i].shape())
            throw DimensionError("assign_parameters: tensor " + std::to_string(i) + " shape " +
                                 shape_str(t[i].shape()) + " vs " + shape_str(s[i].shape()));
        std::copy(s[i].values().begin(), s[i].values().end(), t[i].mutable_values().begin());
    }
}

std::uint64_t parameter_digest(std::span<const Tensor> parameters) {
    ByteWriter w;
    for (const auto& p : parameters) w.f64s(p.values());
    return fnv1a(w.bytes());
}

std::uint64_t parameter_digest(const MlpNetwork& network) {
    auto ps = network.parameters();
    return parameter_digest(ps);
}

}  // namespace lmvae::ad
