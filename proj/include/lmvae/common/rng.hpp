#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace lmvae {

/// Seeded random source. Wraps a 64-bit Mersenne twister; every draw
/// constructs its distribution locally so no sampler caches state outside
/// the engine, which keeps `state()` a complete snapshot.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream derived from (seed, stream id).
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

    double uniform();                 // [0, 1)
    double uniform_open();            // (0, 1)
    double uniform(double lo, double hi);
    double normal();
    double gamma(double shape);       // Gamma(shape, 1)
    double gumbel();                  // Gumbel(0, 1)
    std::size_t below(std::size_t n); // uniform integer in [0, n)

    std::vector<double> normals(std::size_t count);

    std::string state() const;
    void restore(const std::string& state);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace lmvae
