#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmvae/autodiff/mlp.hpp"
#include "lmvae/common/binary_io.hpp"

namespace lmvae::ad {

inline constexpr std::uint32_t kParameterStreamVersion = 1;

struct NamedNetwork {
    std::string name;
    MlpNetwork network;
};

/// Parameter stream layout (little-endian):
///   "LMVP" | u32 version | u32 network count
///   manifest, per network: str name | u32 input width | u32 layer count |
///                          per layer: u32 output width, u8 activation
///   payload, per network and layer: weight [in, out] row-major f64, bias f64
void write_networks(ByteWriter& out, std::span<const NamedNetwork> networks);
std::vector<NamedNetwork> read_networks(ByteReader& in);

/// Copies values from `source` into `target`; the layouts must match.
void assign_parameters(const MlpNetwork& target, const MlpNetwork& source);

/// FNV-1a over the little-endian bytes of every parameter value.
std::uint64_t parameter_digest(std::span<const Tensor> parameters);
std::uint64_t parameter_digest(const MlpNetwork& network);

}  // namespace lmvae::ad
