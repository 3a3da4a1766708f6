#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "forward_oracle.hpp"
#include "gradcheck.hpp"
#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/errors.hpp"
#include "lmvae/discrete/discrete.hpp"

using namespace lmvae;
using ad::Tensor;
using mixture::MixtureState;
using vae::VaeExpert;

namespace {

vae::ExpertConfig class_config(ad::Activation hidden = ad::Activation::LeakyRelu) {
    vae::ExpertConfig c;
    c.input_width = 6;
    c.latent_width = 2;
    c.hidden = {5};
    c.class_count = 3;
    c.class_hidden = {4};
    c.hidden_activation = hidden;
    return c;
}

Tensor random_batch(std::size_t rows, Rng& rng, std::size_t width = 6) {
    std::vector<double> v(rows * width);
    for (auto& x : v) x = rng.uniform();
    return Tensor::matrix(rows, width, v);
}

// Expert whose class encoder ignores x and outputs softmax(bias).
VaeExpert fixed_classifier(std::size_t index, const std::vector<double>& bias, Rng& rng) {
    VaeExpert base(index, class_config(), rng);
    const std::size_t c = bias.size();
    ad::MlpNetwork cls({ad::Linear{Tensor::zeros({6, c}), Tensor::constant({c}, bias), ad::Activation::Softmax}});
    auto cfg = class_config();
    cfg.class_count = c;
    VaeExpert shape(index, cfg, rng);
    return VaeExpert(index, base.encoder(), shape.decoder(), 2, cls);
}

std::vector<double> softmax(std::vector<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double total = 0;
    for (auto& x : v) total += (x = std::exp(x - mx));
    for (auto& x : v) x /= total;
    return v;
}

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Straight-line per-sample ELBO for a class expert with explicit decoder d.
double oracle_elbo(const VaeExpert& e, const std::vector<double>& x, const std::vector<double>& noise,
                   const std::vector<double>& d, bool with_kl_d) {
    auto h = testing::oracle_forward(e.encoder(), x, 1);
    const std::size_t k = e.latent_width();
    std::vector<double> in(k);
    double kl = 0;
    for (std::size_t j = 0; j < k; ++j) {
        in[j] = h[j] + noise[j] * std::exp(0.5 * h[k + j]);
        kl += 0.5 * (std::exp(h[k + j]) + h[j] * h[j] - 1 - h[k + j]);
    }
    in.insert(in.end(), d.begin(), d.end());
    auto xr = testing::oracle_forward(e.decoder(), in, 1);
    double sq = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - xr[i]) * (x[i] - xr[i]);
    double value = -0.5 * sq - 0.5 * static_cast<double>(x.size()) * kLog2Pi - kl;
    if (with_kl_d) {
        auto dp = testing::oracle_forward(e.class_encoder(), x, 1);
        for (double p : dp) value -= p * (std::log(std::max(p, 1e-12)) + std::log(static_cast<double>(dp.size())));
    }
    return value;
}

}  // namespace

TEST_CASE("gumbel-softmax: noiseless limit") {
    auto dp = Tensor::matrix(2, 3, {0.2, 0.5, 0.3, 0.7, 0.1, 0.2});
    auto s1 = discrete::gumbel_softmax(dp, 1.0, std::vector<double>(6, 0.0));
    for (std::size_t i = 0; i < 6; ++i) CHECK(s1.d.values()[i] == doctest::Approx(dp.values()[i]).epsilon(1e-14));
    auto s2 = discrete::gumbel_softmax(dp, 0.4, std::vector<double>(6, 0.0));
    auto expect = softmax({std::log(0.2) / 0.4, std::log(0.5) / 0.4, std::log(0.3) / 0.4});
    for (std::size_t j = 0; j < 3; ++j) CHECK(s2.d.values()[j] == doctest::Approx(expect[j]).epsilon(1e-13));
    CHECK_THROWS_AS(discrete::gumbel_softmax(dp, 0.0, std::vector<double>(6, 0.0)), ConfigError);
    CHECK_THROWS_AS(discrete::gumbel_softmax(dp, -1.0, std::vector<double>(6, 0.0)), ConfigError);
}

TEST_CASE("gumbel-softmax: zero-temperature limit and monotone sharpening") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> raw(4);
        for (auto& v : raw) v = rng.uniform(0.01, 1.0);
        const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
        for (auto& v : raw) v /= total;
        std::vector<double> g(4);
        for (auto& v : g) v = rng.gumbel();
        std::vector<double> score(4);
        for (int k = 0; k < 4; ++k) score[k] = std::log(raw[k]) + g[k];
        const auto top = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
        auto sorted = score;
        std::sort(sorted.rbegin(), sorted.rend());
        const double gap = sorted[0] - sorted[1];

        double previous = 0;
        for (double temp : {1.0, 0.5, 0.1, 0.01}) {
            auto s = discrete::gumbel_softmax(Tensor::matrix(1, 4, raw), temp, g);
            auto d = s.d.values();
            double sum = 0;
            for (double v : d) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-9);
            const double mx = *std::max_element(d.begin(), d.end());
            CHECK(mx >= previous - 1e-15);
            previous = mx;
            if (temp == 0.01 && gap > 0.1) {
                CHECK(mx > 0.99);
                CHECK(static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin()) == top);
            }
        }
    }
}

TEST_CASE("gumbel-softmax: argmax frequencies follow d'") {
    const std::vector<double> dp{0.1, 0.25, 0.4, 0.25};
    const std::size_t n = 100'000;
    std::vector<double> rows;
    rows.reserve(n * 4);
    for (std::size_t i = 0; i < n; ++i) rows.insert(rows.end(), dp.begin(), dp.end());
    Rng rng(2);
    auto s = discrete::gumbel_softmax(Tensor::matrix(n, 4, rows), 0.5, rng);
    std::vector<double> freq(4, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = s.d.values().subspan(i * 4, 4);
        freq[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] += 1.0 / n;
    }
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::fabs(freq[k] - dp[k]) <= 0.01);
}

TEST_CASE("temperature anneal") {
    CHECK(discrete::temperature_at(0.0) == 1.0);
    CHECK(discrete::temperature_at(0.5) == doctest::Approx(0.75));
    CHECK(discrete::temperature_at(1.0) == 0.5);
}

TEST_CASE("categorical KL against the uniform prior") {
    auto uniform = Tensor::matrix(1, 4, {0.25, 0.25, 0.25, 0.25});
    CHECK(vae::categorical_kl_uniform_per_sample(uniform).item() == doctest::Approx(0.0).epsilon(1e-15));
    std::vector<double> hot(10, 0.0);
    hot[3] = 1.0;
    CHECK(vae::categorical_kl_uniform_per_sample(Tensor::matrix(1, 10, hot)).item() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(std::log(10.0) == doctest::Approx(2.3026).epsilon(1e-4));
}

TEST_CASE("supervised ELBO") {
    Rng rng(3);
    SUBCASE("uniform d' has no discrete KL") {
        auto e = fixed_classifier(0, {0.0, 0.0, 0.0}, rng);
        auto x = random_batch(2, rng);
        auto t = discrete::supervised_elbo(e, x, vae::standard_normal(2, 2, rng), 1.0, rng);
        CHECK(t.kl_discrete.item() == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("seeded expert matches the straight-line oracle") {
        Rng seeded(42);
        VaeExpert e(0, class_config(), seeded);
        std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
        std::vector<double> noise{0.3, -1.2};
        std::vector<double> y{0.0, 1.0, 0.0};
        auto t = discrete::supervised_elbo(e, Tensor::matrix(1, 6, x), Tensor::matrix(1, 2, noise),
                                           Tensor::matrix(1, 3, y));
        const double expected = oracle_elbo(e, x, noise, y, true);
        CHECK(t.elbo.item() == doctest::Approx(expected).epsilon(1e-13));
        CHECK(expected == doctest::Approx(-5.7114437219913983).epsilon(1e-12));
    }
    SUBCASE("label width mismatch") {
        VaeExpert e(0, class_config(), rng);
        CHECK_THROWS_AS(discrete::supervised_elbo(e, random_batch(1, rng), vae::standard_normal(1, 2, rng),
                                                  discrete::one_hot({1}, 4)),
                        ContractError);
    }
}

TEST_CASE("mixture supervised loss") {
    Rng rng(4);
    auto x = random_batch(3, rng);
    auto y = discrete::one_hot({0, 2, 1}, 3);
    auto noise = vae::standard_normal(3, 2, rng);

    SUBCASE("single expert reduces to its own terms") {
        VaeExpert e(0, class_config(), rng);
        MixtureState s({e});
        auto t = discrete::mixture_supervised_loss(s, x, y, noise);
        CHECK(t.elbo.item() == discrete::supervised_elbo(e, x, noise, y).elbo.item());
        CHECK(t.cross_entropy.item() == discrete::cross_entropy(e.class_probabilities(x), y).item());
    }
    SUBCASE("perfect prediction has zero cross-entropy") {
        auto e = fixed_classifier(0, {0.0, 0.0, 1000.0}, rng);
        auto y2 = discrete::one_hot({2, 2, 2}, 3);
        MixtureState s({e});
        CHECK(discrete::mixture_supervised_loss(s, x, y2, noise).cross_entropy.item() == 0.0);
    }
    SUBCASE("weighted cross-entropy by direct computation") {
        auto a = fixed_classifier(0, {1.0, 0.0, -1.0}, rng);
        auto b = fixed_classifier(1, {0.0, 2.0, 0.5}, rng);
        MixtureState s({a, b});
        s.set_weights({0.3, 0.7});
        auto pa = softmax({1.0, 0.0, -1.0});
        auto pb = softmax({0.0, 2.0, 0.5});
        const std::vector<std::size_t> labels{0, 2, 1};
        double ce_a = 0, ce_b = 0;
        for (auto l : labels) {
            ce_a -= std::log(pa[l]) / 3;
            ce_b -= std::log(pb[l]) / 3;
        }
        CHECK(discrete::mixture_supervised_loss(s, x, y, noise).cross_entropy.item() ==
              doctest::Approx(0.3 * ce_a + 0.7 * ce_b).epsilon(1e-14));
    }
    SUBCASE("label count mismatch") {
        VaeExpert e(0, class_config(), rng);
        MixtureState s({e});
        CHECK_THROWS_AS(discrete::mixture_supervised_loss(s, x, discrete::one_hot({0, 1}, 3), noise), ContractError);
    }
}

TEST_CASE("semi-supervised objective") {
    Rng rng(5);
    std::vector<VaeExpert> ex;
    for (int i = 0; i < 2; ++i) ex.emplace_back(i, class_config(), rng);
    MixtureState s(ex);
    s.set_weights({0.4, 0.6});
    discrete::SemiSupervisedBatch batch{random_batch(2, rng), discrete::one_hot({1, 0}, 3), random_batch(3, rng)};
    auto nl = vae::standard_normal(2, 2, rng);
    auto nu = vae::standard_normal(3, 2, rng);

    SUBCASE("beta = 0 keeps only the unlabeled term") {
        Rng r1(9), r2(9);
        auto full = discrete::semi_supervised_objective(s, batch, 0.0, nl, nu, 0.8, r1);
        discrete::SemiSupervisedBatch unl{Tensor(), Tensor(), batch.unlabeled_x};
        auto only = discrete::semi_supervised_objective(s, unl, 0.0, nl, nu, 0.8, r2);
        CHECK(full.item() == only.item());
    }
    SUBCASE("empty unlabeled subset reduces to beta times the supervised mixture") {
        Rng r(9);
        discrete::SemiSupervisedBatch lab{batch.labeled_x, batch.labeled_y, Tensor::zeros({0, 6})};
        auto v = discrete::semi_supervised_objective(s, lab, 0.5, nl, nu, 0.8, r);
        auto sup = discrete::mixture_supervised_loss(s, batch.labeled_x, batch.labeled_y, nl);
        CHECK(v.item() == doctest::Approx(0.5 * sup.elbo.item()).epsilon(1e-14));
    }
    SUBCASE("beta = 0.5 matches the straight-line oracle") {
        Rng r(11), mirror(11);
        auto v = discrete::semi_supervised_objective(s, batch, 0.5, nl, nu, 0.8, r);
        // unlabeled: per expert in index order, Gumbel noise row-major [3, 3]
        double unl = 0;
        const auto& w = s.weights();
        for (std::size_t i = 0; i < 2; ++i) {
            std::vector<double> g(9);
            for (auto& x : g) x = mirror.gumbel();
            double acc = 0;
            for (std::size_t b = 0; b < 3; ++b) {
                std::vector<double> xb(batch.unlabeled_x.values().begin() + b * 6,
                                       batch.unlabeled_x.values().begin() + (b + 1) * 6);
                auto dp = testing::oracle_forward(s.expert(i).class_encoder(), xb, 1);
                std::vector<double> logits(3);
                for (int k = 0; k < 3; ++k) logits[k] = (std::log(dp[k]) + g[b * 3 + k]) / 0.8;
                std::vector<double> n{nu.values()[b * 2], nu.values()[b * 2 + 1]};
                acc += oracle_elbo(s.expert(i), xb, n, softmax(logits), false) / 3;
            }
            unl += w[i] * acc;
        }
        double sup = 0;
        for (std::size_t i = 0; i < 2; ++i) {
            double acc = 0;
            for (std::size_t b = 0; b < 2; ++b) {
                std::vector<double> xb(batch.labeled_x.values().begin() + b * 6,
                                       batch.labeled_x.values().begin() + (b + 1) * 6);
                std::vector<double> yb(batch.labeled_y.values().begin() + b * 3,
                                       batch.labeled_y.values().begin() + (b + 1) * 3);
                std::vector<double> n{nl.values()[b * 2], nl.values()[b * 2 + 1]};
                acc += oracle_elbo(s.expert(i), xb, n, yb, true) / 2;
            }
            sup += w[i] * acc;
        }
        CHECK(v.item() == doctest::Approx(unl + 0.5 * sup).epsilon(1e-12));
        CHECK(unl + 0.5 * sup == doctest::Approx(-8.8830265231828509).epsilon(1e-11));
    }
    SUBCASE("beta > 0 with no labels is rejected") {
        Rng r(1);
        discrete::SemiSupervisedBatch unl{Tensor::zeros({0, 6}), Tensor::zeros({0, 3}), batch.unlabeled_x};
        CHECK_THROWS_AS(discrete::semi_supervised_objective(s, unl, 0.5, nl, nu, 0.8, r), ContractError);
    }
}

TEST_CASE("composite discrete losses match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CAPTURE(seed);
        Rng rng(400 + seed);
        std::vector<VaeExpert> ex;
        for (int i = 0; i < 2; ++i) ex.emplace_back(i, class_config(ad::Activation::Tanh), rng);
        MixtureState s(ex);
        s.set_weights({0.35, 0.65});
        auto x = random_batch(3, rng);
        auto y = discrete::one_hot({0, 2, 1}, 3);
        auto noise = vae::standard_normal(3, 2, rng);
        std::vector<Tensor> params;
        for (auto& e : s.experts())
            for (auto& p : e.parameters()) params.push_back(p);

        auto r19 = testing::check_gradients([&] { return discrete::mixture_supervised_loss(s, x, y, noise).elbo; }, params);
        INFO(r19.worst);
        CHECK(r19.max_rel_error <= 1e-4);
        auto r21 = testing::check_gradients(
            [&] { return discrete::mixture_supervised_loss(s, x, y, noise).cross_entropy; }, params);
        INFO(r21.worst);
        CHECK(r21.max_rel_error <= 1e-4);

        discrete::SemiSupervisedBatch batch{x, y, random_batch(4, rng)};
        auto nu = vae::standard_normal(4, 2, rng);
        const std::uint64_t gseed = rng.below(1u << 30);
        auto r23 = testing::check_gradients(
            [&] {
                Rng g(gseed);  // same Gumbel noise on every evaluation
                return discrete::semi_supervised_objective(s, batch, 0.5, noise, nu, 0.7, g);
            },
            params);
        INFO(r23.worst);
        CHECK(r23.max_rel_error <= 1e-3);

        std::vector<double> g(9);
        for (auto& v : g) v = rng.gumbel();
        const auto& e = s.expert(0);
        auto rg = testing::check_gradients(
            [&] { return discrete::cross_entropy(discrete::gumbel_softmax(e.class_probabilities(x), 0.6, g).d, y); },
            e.class_encoder().parameters());
        INFO(rg.worst);
        CHECK(rg.max_rel_error <= 1e-3);
    }
}

TEST_CASE("classify") {
    Rng rng(6);
    auto e = fixed_classifier(0, {0, 0, 0, 9, 0}, rng);
    MixtureState s({e});
    auto x = random_batch(4, rng);
    auto out = discrete::classify(s, x, vae::standard_normal(4, 2, rng));
    for (const auto& c : out) {
        CHECK(c.label == 3);
        CHECK(c.expert == 0);
        CHECK(std::accumulate(c.probabilities.begin(), c.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}
