#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "lmvae/autodiff/ops.hpp"
#include "lmvae/autodiff/optimizer.hpp"
#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"
#include "lmvae/metrics/metrics.hpp"

using namespace lmvae;
using ad::Tensor;
using metrics::ImageShape;
using vae::VaeExpert;

namespace {

vae::ExpertConfig small_config(std::size_t width = 16, std::size_t classes = 0) {
    vae::ExpertConfig c;
    c.input_width = width;
    c.latent_width = 3;
    c.hidden = {8};
    c.class_count = classes;
    c.class_hidden = {6};
    return c;
}

std::vector<double> random_image(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform();
    return v;
}

Tensor random_batch(std::size_t rows, std::size_t cols, Rng& rng) { return Tensor::matrix(rows, cols, random_image(rows * cols, rng)); }

// Independent SSIM: copies each window out, two-pass moments.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w) {
    std::vector<double> vals;
    for (std::size_t y0 = 0; y0 + 8 <= h; y0 += 4)
        for (std::size_t x0 = 0; x0 + 8 <= w; x0 += 4) {
            std::vector<double> pa, pb;
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    pa.push_back(a[(y0 + y) * w + x0 + x]);
                    pb.push_back(b[(y0 + y) * w + x0 + x]);
                }
            const double ma = std::accumulate(pa.begin(), pa.end(), 0.0) / 64;
            const double mb = std::accumulate(pb.begin(), pb.end(), 0.0) / 64;
            double va = 0, vb = 0, cab = 0;
            for (std::size_t i = 0; i < 64; ++i) {
                va += (pa[i] - ma) * (pa[i] - ma) / 64;
                vb += (pb[i] - mb) * (pb[i] - mb) / 64;
                cab += (pa[i] - ma) * (pb[i] - mb) / 64;
            }
            const double c1 = 1e-4, c2 = 9e-4;
            const double lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            const double cs = (2 * cab + c2) / (va + vb + c2);
            vals.push_back(lum * cs);
        }
    return std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
}

double sample_std(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("mse and psnr closed forms") {
    const std::vector<double> zeros(10, 0.0), ones(10, 1.0);
    CHECK(metrics::mse(zeros, ones) == 1.0);
    auto p = metrics::psnr(zeros, ones);
    CHECK(p.db == 0.0);
    CHECK_FALSE(p.exact_match);
    auto same = metrics::psnr(ones, ones);
    CHECK(same.exact_match);
    CHECK(same.db == metrics::kPsnrCap);
    CHECK_THROWS_AS(metrics::mse(zeros, std::vector<double>(3, 0.0)), DimensionError);
}

TEST_CASE("psnr is 10 log10(1 / mse) for random pairs") {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        auto a = random_image(64, rng), b = random_image(64, rng);
        CHECK(metrics::psnr(a, b).db == doctest::Approx(10 * std::log10(1 / metrics::mse(a, b))).epsilon(1e-14));
    }
}

TEST_CASE("ssim: identity, symmetry, bounds and independent oracle") {
    Rng rng(8);
    const ImageShape shape{28, 28, 1};
    for (int i = 0; i < 20; ++i) {
        auto a = random_image(784, rng), b = random_image(784, rng);
        const double s = metrics::ssim(a, b, shape);
        CHECK(s == doctest::Approx(ssim_oracle(a, b, 28, 28)).epsilon(1e-10));
        CHECK(s == doctest::Approx(metrics::ssim(b, a, shape)).epsilon(1e-14));
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
        CHECK(metrics::ssim(a, a, shape) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // a structured pair far from 1
    std::vector<double> a(784), b(784);
    for (std::size_t k = 0; k < 784; ++k) {
        a[k] = (k % 2) ? 1.0 : 0.0;
        b[k] = 1.0 - a[k];
    }
    CHECK(metrics::ssim(a, b, shape) < -0.9);
    CHECK_THROWS_AS(metrics::ssim(a, b, ImageShape{27, 28, 1}), DimensionError);
}

TEST_CASE("ssim batch averages per-image values") {
    Rng rng(2);
    const ImageShape shape{16, 16, 1};
    auto x = random_batch(3, 256, rng), y = random_batch(3, 256, rng);
    double expect = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> a(x.values().begin() + i * 256, x.values().begin() + (i + 1) * 256);
        std::vector<double> b(y.values().begin() + i * 256, y.values().begin() + (i + 1) * 256);
        expect += ssim_oracle(a, b, 16, 16) / 3;
    }
    CHECK(metrics::ssim(x, y, shape) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("transfer score") {
    SUBCASE("zero reconstructions of all-ones images give mse 1") {
        ad::MlpNetwork enc({ad::Linear{Tensor::zeros({4, 2}), Tensor::zeros({2}), ad::Activation::Identity}});
        ad::MlpNetwork dec({ad::Linear{Tensor::zeros({1, 4}), Tensor::zeros({4}), ad::Activation::Identity}});
        VaeExpert zero(0, enc, dec, 1);
        CHECK(metrics::transfer_score(zero, Tensor::matrix(3, 4, std::vector<double>(12, 1.0)), metrics::Delta::Mse) ==
              1.0);
        CHECK(metrics::transfer_score(zero, Tensor::zeros({3, 4}), metrics::Delta::Mse) == 0.0);
    }
    SUBCASE("seeded expert matches a direct loop") {
        Rng rng(6);
        VaeExpert e(0, small_config(), rng);
        auto x = random_batch(5, 16, rng);
        const auto rec = vae::reconstruct_mean(e, x);
        double total = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (std::size_t k = 0; k < 16; ++k) s += std::pow(x.values()[i * 16 + k] - rec.values()[i * 16 + k], 2);
            total += s / 16;
        }
        CHECK(metrics::transfer_score(e, x, metrics::Delta::Mse) == doctest::Approx(total / 5).epsilon(1e-14));
        CHECK_THROWS_AS(metrics::transfer_score(e, x, metrics::Delta::Accuracy), ContractError);
        std::vector<std::size_t> labels(5, 0);
        CHECK_THROWS_AS(metrics::transfer_score(e, x, metrics::Delta::Accuracy, &labels), ContractError);
    }
    SUBCASE("accuracy against argmax d'") {
        Rng rng(7);
        VaeExpert e(0, small_config(16, 4), rng);
        auto x = random_batch(6, 16, rng);
        auto p = e.class_probabilities(x);
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < 6; ++i) {
            auto row = p.values().subspan(i * 4, 4);
            labels.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
        CHECK(metrics::transfer_score(e, x, metrics::Delta::Accuracy, &labels) == 1.0);
        labels[0] = (labels[0] + 1) % 4;
        labels[1] = (labels[1] + 1) % 4;
        CHECK(metrics::transfer_score(e, x, metrics::Delta::Accuracy, &labels) == doctest::Approx(4.0 / 6));
    }
    CHECK(metrics::parse_delta("accuracy") == metrics::Delta::Accuracy);
    CHECK_THROWS_AS(metrics::parse_delta("f1"), ConfigError);
}

TEST_CASE("transfer curve steps strictly increase") {
    metrics::TransferCurve c(1, 0, metrics::Delta::Mse);
    c.add(0, 0.3);
    c.add(5, 0.2);
    CHECK_THROWS_AS(c.add(5, 0.1), ContractError);
    CHECK(c.scores().size() == 2);
}

TEST_CASE("isotonic non-increasing fit") {
    CHECK(metrics::isotonic_nonincreasing({3, 2, 1}) == std::vector<double>{3, 2, 1});
    CHECK(metrics::isotonic_nonincreasing({1, 3}) == std::vector<double>{2, 2});
    CHECK(metrics::isotonic_nonincreasing({5, 1, 3, 0}) == std::vector<double>{5, 2, 2, 0});
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        auto y = random_image(12, rng);
        auto f = metrics::isotonic_nonincreasing(y);
        REQUIRE(f.size() == y.size());
        for (std::size_t i = 1; i < f.size(); ++i) CHECK(f[i] <= f[i - 1] + 1e-15);
        CHECK(std::accumulate(f.begin(), f.end(), 0.0) == doctest::Approx(std::accumulate(y.begin(), y.end(), 0.0)));
        // no non-increasing sequence from nudging the fit does better
        double base = 0;
        for (std::size_t i = 0; i < y.size(); ++i) base += std::pow(y[i] - f[i], 2);
        for (int k = 0; k < 50; ++k) {
            auto g = f;
            const double c = 0.01 * (rng.uniform() - 0.5);
            const std::size_t at = rng.below(g.size());
            for (std::size_t i = 0; i <= at; ++i) g[i] += c;  // prefix shift keeps order when c > 0
            if (c < 0)
                for (std::size_t i = at + 1; i < g.size(); ++i) g[i] += c;
            bool monotone = true;
            for (std::size_t i = 1; i < g.size(); ++i) monotone &= g[i] <= g[i - 1];
            if (!monotone) continue;
            double e = 0;
            for (std::size_t i = 0; i < y.size(); ++i) e += std::pow(y[i] - g[i], 2);
            CHECK(e >= base - 1e-12);
        }
    }
    CHECK(metrics::nonincreasing_trend({1.0, 0.8, 0.85, 0.5}, 0.1).passed);
    CHECK_FALSE(metrics::nonincreasing_trend({1.0, 0.2, 0.9, 0.1}, 0.1).passed);
    CHECK_FALSE(metrics::nonincreasing_trend({0.1, 0.2}, 0.5).passed);
}

TEST_CASE("nll is the negated ELBO") {
    Rng rng(3);
    VaeExpert e(0, small_config(), rng);
    auto x = random_batch(4, 16, rng);
    Rng a(11), b(11);
    auto est = metrics::negative_log_likelihood(e, x, 1, a);
    const auto noise = vae::standard_normal(4, 3, b);
    CHECK(est.nll == doctest::Approx(-vae::elbo(e, x, noise).elbo.item()).epsilon(1e-12));
    CHECK(std::isnan(est.standard_error));
    CHECK_THROWS_AS(metrics::negative_log_likelihood(e, x, 0, a), ContractError);
}

TEST_CASE("nll Monte-Carlo error shrinks as one over root draws") {
    Rng rng(12);
    VaeExpert e(0, small_config(), rng);
    auto x = random_batch(2, 16, rng);
    std::vector<double> log_draws, log_sd;
    for (std::size_t draws : {1u, 16u, 256u}) {
        std::vector<double> reps;
        for (std::uint64_t r = 0; r < 60; ++r) {
            Rng rr = Rng::stream(99, r);
            reps.push_back(metrics::negative_log_likelihood(e, x, draws, rr).nll);
        }
        log_draws.push_back(std::log(static_cast<double>(draws)));
        log_sd.push_back(std::log(sample_std(reps)));
        if (draws > 1) {
            Rng rr(5);
            const double se = metrics::negative_log_likelihood(e, x, draws, rr).standard_error;
            CHECK(se == doctest::Approx(sample_std(reps)).epsilon(0.5));
        }
    }
    // least-squares slope of log sd on log draws
    const double mx = std::accumulate(log_draws.begin(), log_draws.end(), 0.0) / 3;
    const double my = std::accumulate(log_sd.begin(), log_sd.end(), 0.0) / 3;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        num += (log_draws[i] - mx) * (log_sd[i] - my);
        den += (log_draws[i] - mx) * (log_draws[i] - mx);
    }
    CHECK(num / den == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("frozen expert nll is unchanged after another expert trains") {
    Rng rng(13);
    VaeExpert frozen(0, small_config(), rng), active(1, small_config(), rng);
    frozen.set_frozen(true);
    auto x = random_batch(8, 16, rng);
    Rng a(21);
    const double before = metrics::negative_log_likelihood(frozen, x, 32, a).nll;
    ad::SgdOptimizer opt(0.05);
    auto params = active.trainable_parameters();
    opt.add_parameters(params);
    for (int it = 0; it < 20; ++it) {
        opt.zero_grad();
        ad::backward(ad::neg(vae::elbo(active, x, vae::standard_normal(8, 3, rng)).elbo));
        opt.step();
    }
    Rng b(21);
    CHECK(metrics::negative_log_likelihood(frozen, x, 32, b).nll == before);
}

TEST_CASE("importance-weighted nll sits below the ELBO-based nll") {
    Rng rng(14);
    VaeExpert e(0, small_config(), rng);
    auto x = random_batch(2, 16, rng);
    Rng a(1), b(2);
    auto iw = metrics::importance_weighted_nll(e, x, 4000, a);
    auto plain = metrics::negative_log_likelihood(e, x, 200, b);
    CHECK(iw.nll <= plain.nll + 3 * (iw.standard_error + plain.standard_error));
}

TEST_CASE("latent interpolation and traversal") {
    for (std::size_t classes : {0u, 3u}) {
        Rng rng(15 + classes);
        VaeExpert e(0, small_config(16, classes), rng);
        auto xa = random_batch(1, 16, rng), xb = random_batch(1, 16, rng);
        auto two = metrics::latent_interpolate(e, xa, xb, 2);
        const auto ra = vae::reconstruct_mean(e, xa), rb = vae::reconstruct_mean(e, xb);
        for (std::size_t k = 0; k < 16; ++k) {
            CHECK(two.values()[k] == ra.values()[k]);
            CHECK(two.values()[16 + k] == rb.values()[k]);
        }
        // midpoint decodes (z_A + z_B) / 2
        auto three = metrics::latent_interpolate(e, xa, xb, 3);
        auto ea = e.encode(xa), eb = e.encode(xb);
        std::vector<double> mid;
        for (std::size_t k = 0; k < 3; ++k) mid.push_back(0.5 * ea.mean.values()[k] + 0.5 * eb.mean.values()[k]);
        if (classes) {
            auto da = e.class_probabilities(xa), db = e.class_probabilities(xb);
            for (std::size_t k = 0; k < classes; ++k) mid.push_back(0.5 * da.values()[k] + 0.5 * db.values()[k]);
        }
        auto dm = e.decode(Tensor::matrix(1, mid.size(), mid));
        for (std::size_t k = 0; k < 16; ++k)
            CHECK(three.values()[16 + k] == doctest::Approx(std::clamp(dm.values()[k], 0.0, 1.0)).epsilon(1e-14));

        auto flat = metrics::latent_traverse(e, xa, 1, 5, 0.0, 0.0);
        for (std::size_t s = 1; s < 5; ++s)
            for (std::size_t k = 0; k < 16; ++k) CHECK(flat.values()[s * 16 + k] == flat.values()[k]);
        auto sweep = metrics::latent_traverse(e, xa, 0, 7);
        CHECK(sweep.rows() == 7);
        CHECK_THROWS_AS(metrics::latent_traverse(e, xa, 3, 5), RangeError);
        CHECK_THROWS_AS(metrics::latent_interpolate(e, xa, xb, 1), ContractError);
    }
}

TEST_CASE("pgm and ppm grids") {
    const auto path = (std::filesystem::temp_directory_path() / "lmvae_grid.pgm").string();
    auto imgs = Tensor::matrix(3, 4, {0, 1, 0.5, 0, 1, 1, 1, 1, 0, 0, 0, 0});
    metrics::write_image_grid(path, imgs, ImageShape{2, 2, 1}, 2);
    const auto bytes = read_file_bytes(path);
    const std::string header = "P5\n4 4\n255\n";
    REQUIRE(bytes.size() == header.size() + 16);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
    const std::vector<std::uint8_t> body(bytes.begin() + static_cast<std::ptrdiff_t>(header.size()), bytes.end());
    CHECK(body == std::vector<std::uint8_t>{0, 255, 255, 255, 128, 0, 255, 255, 0, 0, 0, 0, 0, 0, 0, 0});
    std::remove(path.c_str());

    const auto ppm = (std::filesystem::temp_directory_path() / "lmvae_grid.ppm").string();
    metrics::write_image_grid(ppm, Tensor::matrix(1, 3, {1, 0, 0}), ImageShape{1, 1, 3}, 4);
    const auto pb = read_file_bytes(ppm);
    CHECK(std::string(pb.begin(), pb.begin() + 3) == "P6\n");
    CHECK(pb.back() == 0);
    CHECK(pb[pb.size() - 3] == 255);
    std::remove(ppm.c_str());
}

TEST_CASE("eval report csv and summary") {
    metrics::EvalReport r;
    r.timestamp = "2026-01-01T00:00:00Z";
    r.tasks.push_back({"mnist", 50.5, 0.02, {16.98, false}, 0.7, 0.9});
    r.tasks.push_back({"blank", 1.0, 0.0, {metrics::kPsnrCap, true}, 1.0, std::nullopt});
    r.routing = {{10, 0}, {1, 9}};
    const auto csv = r.to_csv();
    CHECK(csv.rfind("task,metric,value\n", 0) == 0);
    CHECK(csv.find("mnist,accuracy,0.9\n") != std::string::npos);
    CHECK(csv.find("blank,accuracy") == std::string::npos);
    CHECK(csv.find("blank,psnr_exact_match,1\n") != std::string::npos);
    CHECK(csv.find("blank,routing_expert_1,9\n") != std::string::npos);
    const auto s = r.summary();
    CHECK(s.find("exact") != std::string::npos);
    CHECK(s.find("routing") != std::string::npos);
    CHECK(metrics::utc_timestamp().size() == 20);
}
