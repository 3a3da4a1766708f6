#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "forward_oracle.hpp"
#include "gradcheck.hpp"
#include "lmvae/autodiff/mlp.hpp"
#include "lmvae/autodiff/ops.hpp"
#include "lmvae/autodiff/optimizer.hpp"
#include "lmvae/autodiff/serialize.hpp"
#include "lmvae/common/errors.hpp"

using namespace lmvae;
using ad::Activation;
using ad::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::matrix(r, c, std::move(v));
}

// Keeps samples at least `gap` away from `kink` so one-sided kinks do not
// sit inside the finite-difference stencil.
Tensor away_from(Tensor t, double kink, double gap) {
    for (auto& x : t.mutable_values())
        if (std::fabs(x - kink) < gap) x = kink + (x < kink ? -gap : gap);
    return t;
}

void require_grad_ok(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double tol = 1e-4) {
    auto r = testing::check_gradients(loss, std::move(inputs));
    INFO(r.worst);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error <= tol);
}

}  // namespace

TEST_CASE("forward: identity layer passes input through") {
    ad::Linear l{Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::constant({3}, {0, 0, 0}), Activation::Identity};
    ad::MlpNetwork net({l});
    auto y = net.forward(Tensor::matrix(1, 3, {1, 2, 3}));
    CHECK(y.at(0, 0) == 1.0);
    CHECK(y.at(0, 1) == 2.0);
    CHECK(y.at(0, 2) == 3.0);
}

TEST_CASE("forward: scalar affine layer") {
    ad::MlpNetwork net({ad::Linear{Tensor::matrix(1, 1, {2}), Tensor::constant({1}, {1}), Activation::Identity}});
    CHECK(net.forward(Tensor::matrix(1, 1, {3})).item() == 7.0);
}

TEST_CASE("forward: seeded three-layer net matches oracle and fixture") {
    Rng rng(42);
    ad::MlpNetwork net(4, {{5, Activation::LeakyRelu}, {3, Activation::Tanh}, {2, Activation::Identity}}, rng);
    auto expected = testing::oracle_forward(net, std::vector<double>(4, 1.0), 1);
    auto y = net.forward(Tensor::matrix(1, 4, {1, 1, 1, 1}));
    REQUIRE(y.numel() == 2);
    for (std::size_t j = 0; j < 2; ++j) CHECK(y.values()[j] == doctest::Approx(expected[j]).epsilon(1e-14));
    // frozen from the oracle
    CHECK(expected[0] == doctest::Approx(0.28004602111683669).epsilon(1e-14));
    CHECK(expected[1] == doctest::Approx(-0.27343650420249638).epsilon(1e-14));
}

TEST_CASE("forward: batch dimension passes through") {
    Rng rng(3);
    ad::MlpNetwork net(6, ad::make_layer_specs({8}, Activation::Tanh, 4, Activation::Softmax), rng);
    Rng data(4);
    auto x = random_matrix(5, 6, data);
    auto y = net.forward(x);
    CHECK(y.rows() == 5);
    CHECK(y.cols() == 4);
    auto expected = testing::oracle_forward(net, {x.values().begin(), x.values().end()}, 5);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(y.values()[i] == doctest::Approx(expected[i]).epsilon(1e-13));
}

TEST_CASE("forward: width mismatch names the layer") {
    Rng rng(1);
    ad::MlpNetwork net(4, {{3, Activation::Tanh}}, rng);
    CHECK_THROWS_AS(net.forward(Tensor::matrix(1, 5, std::vector<double>(5, 0.0))), DimensionError);
    try {
        net.forward(Tensor::matrix(1, 5, std::vector<double>(5, 0.0)));
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("mlp: softmax only as final activation, widths chain") {
    Rng rng(1);
    CHECK_THROWS_AS(ad::MlpNetwork(3, {{4, Activation::Softmax}, {2, Activation::Identity}}, rng), DimensionError);
    ad::Linear a{Tensor::zeros({3, 4}), Tensor::zeros({4}), Activation::Tanh};
    ad::Linear b{Tensor::zeros({5, 2}), Tensor::zeros({2}), Activation::Identity};
    CHECK_THROWS_AS(ad::MlpNetwork({a, b}), DimensionError);
}

TEST_CASE("mlp: glorot bounds and zero bias") {
    Rng rng(11);
    ad::MlpNetwork net(20, {{30, Activation::Tanh}}, rng);
    const double bound = std::sqrt(6.0 / 50.0);
    for (double w : net.layers()[0].weight.values()) CHECK(std::fabs(w) <= bound);
    for (double b : net.layers()[0].bias.values()) CHECK(b == 0.0);
}

TEST_CASE("backward: x squared at 3") {
    auto x = Tensor::parameter({}, {3.0});
    ad::backward(ad::square(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: sum of softmax has zero gradient") {
    Rng rng(5);
    auto x = random_matrix(3, 4, rng);
    x.set_requires_grad(true);
    ad::backward(ad::sum(ad::softmax_rows(x)));
    for (double g : x.grad()) CHECK(std::fabs(g) < 1e-12);
}

TEST_CASE("backward: non-scalar loss is a contract error") {
    auto x = Tensor::parameter({2}, {1, 2});
    CHECK_THROWS_AS(ad::backward(ad::square(x)), ContractError);
}

TEST_CASE("backward: repeated calls accumulate") {
    auto x = Tensor::parameter({}, {3.0});
    auto loss = ad::square(x);
    ad::backward(loss);
    ad::backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("backward: seeded MLP squared error matches finite differences") {
    Rng rng(7);
    ad::MlpNetwork net(5, ad::make_layer_specs({7, 6}, Activation::Tanh, 3, Activation::Identity), rng);
    auto x = random_matrix(4, 5, rng);
    auto target = random_matrix(4, 3, rng);
    auto loss = [&] { return ad::sum(ad::square(net.forward(x) - target)); };
    require_grad_ok(loss, net.parameters());
}

TEST_CASE("backward: every primitive matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CAPTURE(seed);
        Rng rng(100 + seed);
        auto a = random_matrix(3, 4, rng);
        auto b = random_matrix(3, 4, rng);
        auto w = random_matrix(4, 2, rng);
        auto bias = Tensor::constant({2}, {rng.uniform(-2, 2), rng.uniform(-2, 2)});
        auto row = Tensor::constant({4}, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
        auto s = Tensor::scalar(rng.uniform(-2, 2));
        auto pos = random_matrix(3, 4, rng, 0.1, 2.0);
        // a fixed linear read-out makes every loss depend on every element
        auto probe = random_matrix(3, 4, rng);
        auto read = [&](const Tensor& t) { return ad::sum(t * probe); };
        auto probe2 = random_matrix(3, 2, rng);

        SUBCASE("matmul") { require_grad_ok([&] { return ad::sum(ad::matmul(a, w) * probe2); }, {a, w}); }
        SUBCASE("linear") { require_grad_ok([&] { return ad::sum(ad::linear(a, w, bias) * probe2); }, {a, w, bias}); }
        SUBCASE("add_row") { require_grad_ok([&] { return read(ad::add_row(a, row)); }, {a, row}); }
        SUBCASE("add") { require_grad_ok([&] { return read(a + b); }, {a, b}); }
        SUBCASE("sub") { require_grad_ok([&] { return read(a - b); }, {a, b}); }
        SUBCASE("mul") { require_grad_ok([&] { return read(a * b); }, {a, b}); }
        SUBCASE("broadcast mul") { require_grad_ok([&] { return read(a * s); }, {a, s}); }
        SUBCASE("broadcast add") { require_grad_ok([&] { return read(s + a); }, {a, s}); }
        SUBCASE("scale") { require_grad_ok([&] { return read(ad::scale(a, -1.7)); }, {a}); }
        SUBCASE("add_scalar") { require_grad_ok([&] { return read(ad::add_scalar(a, 0.3)); }, {a}); }
        SUBCASE("neg") { require_grad_ok([&] { return read(ad::neg(a)); }, {a}); }
        SUBCASE("exp") { require_grad_ok([&] { return read(ad::exp(a)); }, {a}); }
        SUBCASE("log") { require_grad_ok([&] { return read(ad::log(pos)); }, {pos}); }
        SUBCASE("square") { require_grad_ok([&] { return read(ad::square(a)); }, {a}); }
        SUBCASE("abs") {
            auto c = away_from(a, 0.0, 1e-3);
            require_grad_ok([&] { return read(ad::abs(c)); }, {c});
        }
        SUBCASE("clamp_min") {
            auto c = away_from(a, 0.25, 1e-3);
            require_grad_ok([&] { return read(ad::clamp_min(c, 0.25)); }, {c});
        }
        SUBCASE("tanh") { require_grad_ok([&] { return read(ad::tanh(a)); }, {a}); }
        SUBCASE("sigmoid") { require_grad_ok([&] { return read(ad::sigmoid(a)); }, {a}); }
        SUBCASE("leaky_relu") {
            auto c = away_from(a, 0.0, 1e-3);
            require_grad_ok([&] { return read(ad::leaky_relu(c)); }, {c});
        }
        SUBCASE("softmax_rows") { require_grad_ok([&] { return read(ad::softmax_rows(a)); }, {a}); }
        SUBCASE("log_softmax_rows") { require_grad_ok([&] { return read(ad::log_softmax_rows(a)); }, {a}); }
        SUBCASE("mean") { require_grad_ok([&] { return ad::mean(a * probe); }, {a}); }
        SUBCASE("row_sum") {
            auto weights = Tensor::constant({3}, {0.5, -1.0, 2.0});
            require_grad_ok([&] { return ad::sum(ad::row_sum(a) * weights); }, {a});
        }
        SUBCASE("slice_cols") { require_grad_ok([&] { return ad::sum(ad::slice_cols(a, 1, 3) * ad::slice_cols(probe, 0, 2)); }, {a}); }
        SUBCASE("concat_cols") {
            auto wide = random_matrix(3, 6, rng);
            require_grad_ok([&] { return ad::sum(ad::concat_cols(a, probe2) * wide); }, {a, probe2});
        }
    }
}

TEST_CASE("backward: graph isolation") {
    auto x = Tensor::parameter({}, {2.0});
    auto y = Tensor::parameter({}, {5.0});
    auto lx = ad::square(x);
    auto ly = ad::square(y);
    ad::backward(lx);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK_FALSE(y.has_grad());
    y.zero_grad();
    ad::backward(lx);
    CHECK(y.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard stops recording") {
    auto x = Tensor::parameter({}, {2.0});
    Tensor y;
    {
        ad::NoGradGuard guard;
        y = ad::square(x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node().parents.empty());
    CHECK(ad::grad_enabled());
}

TEST_CASE("step: single plain SGD update") {
    auto p = Tensor::parameter({}, {1.0});
    ad::SgdOptimizer opt(0.1);
    opt.add_parameter(p);
    p.node().ensure_grad()[0] = 2.0;
    opt.step();
    CHECK(p.item() == doctest::Approx(0.8));
    CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("step: zero learning rate leaves parameters unchanged") {
    auto p = Tensor::parameter({2}, {1.5, -0.5});
    ad::SgdOptimizer opt(0.0);
    opt.add_parameter(p);
    p.node().ensure_grad() = {3.0, 4.0};
    opt.step();
    CHECK(p.values()[0] == 1.5);
    CHECK(p.values()[1] == -0.5);
}

TEST_CASE("step: momentum recurrence") {
    // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
    auto p = Tensor::parameter({}, {0.0});
    ad::SgdOptimizer opt(0.1, 0.9);
    opt.add_parameter(p);
    for (int i = 0; i < 2; ++i) {
        p.node().ensure_grad()[0] = 1.0;
        opt.step();
    }
    CHECK(p.item() == doctest::Approx(-0.29).epsilon(1e-14));
    CHECK(opt.step_count() == 2);
}

TEST_CASE("step: adam moments and bias correction") {
    auto p = Tensor::parameter({}, {1.0});
    ad::AdamOptimizer opt(0.1);
    opt.add_parameter(p);
    p.node().ensure_grad()[0] = 2.0;
    opt.step();
    // first step moves by lr * g / (|g| + eps)
    CHECK(p.item() == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    p.node().ensure_grad()[0] = -1.0;
    opt.step();
    const double m = 0.9 * 0.2 + 0.1 * -1.0, v = 0.999 * 0.004 + 0.001 * 1.0;
    const double expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * (m / 0.19) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    CHECK(p.item() == doctest::Approx(expect).epsilon(1e-13));
    CHECK(opt.step_count() == 2);
    CHECK_THROWS_AS(ad::AdamOptimizer(0.1, 1.0), ConfigError);
}

TEST_CASE("step: contract errors") {
    auto p = Tensor::parameter({}, {0.0});
    ad::SgdOptimizer opt(0.1);
    opt.add_parameter(p);
    CHECK_THROWS_AS(opt.add_parameter(p), ContractError);
    CHECK_THROWS_AS(opt.step(), ContractError);
    CHECK_THROWS_AS(ad::SgdOptimizer(-1.0), ConfigError);
    CHECK_THROWS_AS(ad::SgdOptimizer(0.1, 1.0), ConfigError);
}

TEST_CASE("determinism: identical seeds give bit-identical trajectories") {
    auto run = [] {
        Rng rng(21);
        ad::MlpNetwork net(3, ad::make_layer_specs({4}, Activation::LeakyRelu, 2, Activation::Identity), rng);
        ad::SgdOptimizer opt(0.05, 0.5);
        auto params = net.parameters();
        opt.add_parameters(params);
        for (int it = 0; it < 25; ++it) {
            auto x = random_matrix(6, 3, rng);
            auto loss = ad::mean(ad::square(net.forward(x) - ad::slice_cols(x, 0, 2)));
            opt.zero_grad();
            ad::backward(loss);
            opt.step();
        }
        return ad::parameter_digest(net);
    };
    CHECK(run() == run());
}

TEST_CASE("serialize: parameter stream round-trip") {
    Rng rng(9);
    ad::MlpNetwork enc(6, ad::make_layer_specs({5}, Activation::LeakyRelu, 4, Activation::Identity), rng);
    ad::MlpNetwork cls(6, ad::make_layer_specs({3}, Activation::Tanh, 2, Activation::Softmax), rng);
    std::vector<ad::NamedNetwork> nets{{"enc", enc}, {"cls", cls}};
    ByteWriter w;
    ad::write_networks(w, nets);
    ByteReader r(w.bytes());
    auto back = ad::read_networks(r);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "enc");
    CHECK(back[1].network.layers().back().activation == Activation::Softmax);
    CHECK(ad::parameter_digest(back[0].network) == ad::parameter_digest(enc));
    CHECK(ad::parameter_digest(back[1].network) == ad::parameter_digest(cls));
    ByteWriter again;
    ad::write_networks(again, back);
    CHECK(again.bytes() == w.bytes());

    auto bytes = w.bytes();
    bytes[0] = 'X';
    ByteReader bad(bytes);
    CHECK_THROWS_AS(ad::read_networks(bad), FormatError);
    std::vector<std::uint8_t> cut(w.bytes().begin(), w.bytes().end() - 3);
    ByteReader trunc(cut);
    CHECK_THROWS_AS(ad::read_networks(trunc), FormatError);
}

TEST_CASE("chain shares parameters, clone does not") {
    Rng rng(2);
    ad::MlpNetwork a(3, {{4, Activation::Tanh}}, rng);
    ad::MlpNetwork b(4, {{2, Activation::Identity}}, rng);
    auto ab = ad::MlpNetwork::chain(a, b);
    CHECK(ab.layers()[0].weight.same_node(a.layers()[0].weight));
    auto c = a.clone();
    CHECK_FALSE(c.layers()[0].weight.same_node(a.layers()[0].weight));
    CHECK(ad::parameter_digest(c) == ad::parameter_digest(a));
}
