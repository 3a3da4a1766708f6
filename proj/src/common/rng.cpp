#include "lmvae/common/rng.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lmvae/common/errors.hpp"

namespace lmvae {

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      0x4c4d5641u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return Rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::uniform_open() {
    double u = 0.0;
    do {
        u = uniform();
    } while (u <= 0.0);
    return u;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

double Rng::gamma(double shape) {
    if (!(shape > 0.0)) throw ContractError("gamma shape must be positive");
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
}

double Rng::gumbel() { return -std::log(-std::log(uniform_open())); }

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ContractError("below(0)");
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::vector<double> Rng::normals(std::size_t count) {
    std::vector<double> out(count);
    for (auto& v : out) v = normal();
    return out;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw FormatError("corrupt rng state");
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace lmvae
