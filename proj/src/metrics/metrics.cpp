#include "lmvae/metrics/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <limits>
#include <sstream>

#include "lmvae/autodiff/ops.hpp"
#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::metrics {

namespace {

void same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": sizes " + std::to_string(a) + " and " + std::to_string(b));
    if (a == 0) throw ContractError(std::string(what) + " of empty inputs");
}

void check_row(const vae::VaeExpert& e, const Tensor& x, const char* what) {
    if (x.shape().size() != 2 || x.rows() != 1 || x.cols() != e.input_width())
        throw DimensionError(std::string(what) + " expects a single [1, " + std::to_string(e.input_width()) + "] sample");
}

// Posterior mean, followed by d' for class experts: the decoder input.
std::vector<double> latent_code(const vae::VaeExpert& e, const Tensor& x) {
    ad::NoGradGuard guard;
    auto enc = e.encode(x);
    std::vector<double> v(enc.mean.values().begin(), enc.mean.values().end());
    if (e.class_count() > 0) {
        auto d = e.class_probabilities(x);
        v.insert(v.end(), d.values().begin(), d.values().end());
    }
    return v;
}

Tensor decode_rows(const vae::VaeExpert& e, std::vector<double> codes, std::size_t rows) {
    ad::NoGradGuard guard;
    const std::size_t w = codes.size() / rows;
    auto out = e.decode(Tensor::matrix(rows, w, std::move(codes)));
    std::vector<double> v(out.values().begin(), out.values().end());
    for (auto& p : v) p = std::clamp(p, 0.0, 1.0);
    return Tensor::constant(out.shape(), std::move(v));
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

}  // namespace

double mse(std::span<const double> a, std::span<const double> b) {
    same_size(a.size(), b.size(), "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("mse: shapes differ");
    return mse(a.values(), b.values());
}

Psnr psnr(std::span<const double> a, std::span<const double> b) {
    const double m = mse(a, b);
    if (m == 0) return {kPsnrCap, true};
    return {std::min(kPsnrCap, 10.0 * std::log10(1.0 / m)), false};
}

Psnr psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("psnr: shapes differ");
    return psnr(a.values(), b.values());
}

double ssim(std::span<const double> a, std::span<const double> b, const ImageShape& shape) {
    same_size(a.size(), b.size(), "ssim");
    if (a.size() != shape.size()) throw DimensionError("ssim: image size does not match the shape");
    constexpr std::size_t kWin = 8, kStride = 4;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::size_t wh = std::min(kWin, shape.height), ww = std::min(kWin, shape.width);
    double total = 0;
    std::size_t windows = 0;
    for (std::size_t ch = 0; ch < shape.channels; ++ch)
        for (std::size_t y0 = 0; y0 + wh <= shape.height; y0 += kStride)
            for (std::size_t x0 = 0; x0 + ww <= shape.width; x0 += kStride) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (std::size_t y = y0; y < y0 + wh; ++y)
                    for (std::size_t x = x0; x < x0 + ww; ++x) {
                        const std::size_t i = (y * shape.width + x) * shape.channels + ch;
                        sa += a[i];
                        sb += b[i];
                        saa += a[i] * a[i];
                        sbb += b[i] * b[i];
                        sab += a[i] * b[i];
                    }
                const double n = static_cast<double>(wh * ww);
                const double ma = sa / n, mb = sb / n;
                const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
    return total / static_cast<double>(windows);
}

double ssim(const Tensor& a, const Tensor& b, const ImageShape& shape) {
    if (a.shape() != b.shape() || a.shape().size() != 2) throw DimensionError("ssim: batch shapes differ");
    const std::size_t d = a.cols();
    double total = 0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        total += ssim(a.values().subspan(i * d, d), b.values().subspan(i * d, d), shape);
    return total / static_cast<double>(a.rows());
}

const char* delta_name(Delta d) { return d == Delta::Mse ? "mse" : "accuracy"; }

Delta parse_delta(const std::string& name) {
    if (name == "mse") return Delta::Mse;
    if (name == "accuracy") return Delta::Accuracy;
    throw ConfigError("unknown transfer metric '" + name + "'");
}

double transfer_score(const vae::VaeExpert& expert, const Tensor& x, Delta delta,
                      const std::vector<std::size_t>* labels) {
    if (x.shape().size() != 2 || x.rows() == 0) throw ContractError("transfer score needs a non-empty batch");
    const std::size_t n = x.rows(), d = x.cols();
    if (delta == Delta::Mse) {
        const auto rec = vae::reconstruct_mean(expert, x);
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) total += mse(x.values().subspan(i * d, d), rec.values().subspan(i * d, d));
        return total / static_cast<double>(n);
    }
    if (!labels) throw ContractError("accuracy transfer score needs labels");
    if (labels->size() != n) throw ContractError("label count differs from the batch size");
    if (!expert.has_class_encoder())
        throw ContractError("expert " + std::to_string(expert.index()) + " has no class encoder for accuracy");
    ad::NoGradGuard guard;
    const auto p = expert.class_probabilities(x);
    const std::size_t c = p.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = p.values().subspan(i * c, c);
        correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == (*labels)[i];
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void TransferCurve::add(std::size_t step, double score) {
    if (!steps_.empty() && step <= steps_.back())
        throw ContractError("transfer curve steps must increase (" + std::to_string(step) + " after " +
                            std::to_string(steps_.back()) + ")");
    steps_.push_back(step);
    scores_.push_back(score);
}

std::vector<double> isotonic_nonincreasing(const std::vector<double>& y) {
    // blocks of (sum, count), merged while a later block mean exceeds an earlier one
    std::vector<double> sum;
    std::vector<std::size_t> count;
    for (double v : y) {
        sum.push_back(v);
        count.push_back(1);
        while (sum.size() > 1) {
            const std::size_t k = sum.size() - 1;
            if (sum[k] / static_cast<double>(count[k]) <= sum[k - 1] / static_cast<double>(count[k - 1])) break;
            sum[k - 1] += sum[k];
            count[k - 1] += count[k];
            sum.pop_back();
            count.pop_back();
        }
    }
    std::vector<double> fit;
    for (std::size_t b = 0; b < sum.size(); ++b) fit.insert(fit.end(), count[b], sum[b] / static_cast<double>(count[b]));
    return fit;
}

TrendCheck nonincreasing_trend(const std::vector<double>& y, double slack) {
    if (y.size() < 2) throw ContractError("trend check needs at least two points");
    const auto fit = isotonic_nonincreasing(y);
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double range = *hi - *lo;
    TrendCheck t;
    t.drop = y.front() - y.back();
    for (std::size_t i = 0; i < y.size(); ++i) t.max_deviation = std::max(t.max_deviation, std::abs(y[i] - fit[i]));
    if (range > 0) t.max_deviation /= range;
    t.passed = t.drop > 0 && t.max_deviation <= slack;
    return t;
}

NllEstimate negative_log_likelihood(const vae::VaeExpert& expert, const Tensor& x, std::size_t draws, Rng& rng) {
    if (draws == 0) throw ContractError("NLL needs at least one draw");
    if (x.shape().size() != 2 || x.rows() == 0) throw ContractError("NLL needs a non-empty batch");
    std::vector<double> means;
    for (std::size_t k = 0; k < draws; ++k) {
        const auto per = vae::elbo_per_sample(expert, x, vae::standard_normal(x.rows(), expert.latent_width(), rng));
        double s = 0;
        for (double v : per) s += v;
        means.push_back(-s / static_cast<double>(per.size()));
    }
    NllEstimate r;
    r.draws = draws;
    for (double m : means) r.nll += m;
    r.nll /= static_cast<double>(draws);
    if (draws < 2) {
        r.standard_error = std::numeric_limits<double>::quiet_NaN();
    } else {
        double ss = 0;
        for (double m : means) ss += (m - r.nll) * (m - r.nll);
        r.standard_error = std::sqrt(ss / static_cast<double>(draws - 1) / static_cast<double>(draws));
    }
    return r;
}

NllEstimate importance_weighted_nll(const vae::VaeExpert& expert, const Tensor& x, std::size_t draws, Rng& rng) {
    if (x.shape().size() != 2 || x.rows() == 0) throw ContractError("NLL needs a non-empty batch");
    NllEstimate r;
    r.draws = draws;
    double var = 0;
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.values().subspan(i * d, d);
        auto est = vae::importance_log_likelihood(expert, Tensor::matrix(1, d, {row.begin(), row.end()}), draws, rng);
        r.nll -= est.value;
        var += est.standard_error * est.standard_error;
    }
    const double n = static_cast<double>(x.rows());
    r.nll /= n;
    r.standard_error = std::sqrt(var) / n;
    return r;
}

Tensor latent_interpolate(const vae::VaeExpert& expert, const Tensor& xa, const Tensor& xb, std::size_t steps) {
    if (steps < 2) throw ContractError("interpolation needs at least two steps");
    check_row(expert, xa, "interpolation");
    check_row(expert, xb, "interpolation");
    const auto za = latent_code(expert, xa), zb = latent_code(expert, xb);
    std::vector<double> codes;
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
        for (std::size_t k = 0; k < za.size(); ++k) codes.push_back((1 - t) * za[k] + t * zb[k]);
    }
    return decode_rows(expert, std::move(codes), steps);
}

Tensor latent_traverse(const vae::VaeExpert& expert, const Tensor& x, std::size_t dim, std::size_t steps, double lo,
                       double hi) {
    if (steps < 2) throw ContractError("traversal needs at least two steps");
    if (dim >= expert.latent_width())
        throw RangeError("latent dimension " + std::to_string(dim) + " out of range for width " +
                         std::to_string(expert.latent_width()));
    check_row(expert, x, "traversal");
    const auto z = latent_code(expert, x);
    std::vector<double> codes;
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
        auto row = z;
        row[dim] = lo + (hi - lo) * t;
        codes.insert(codes.end(), row.begin(), row.end());
    }
    return decode_rows(expert, std::move(codes), steps);
}

void write_image_grid(const std::string& path, const Tensor& images, const ImageShape& shape, std::size_t columns) {
    if (shape.channels != 1 && shape.channels != 3) throw ContractError("image grids need one or three channels");
    if (images.shape().size() != 2 || images.cols() != shape.size())
        throw DimensionError("image rows do not match the image shape");
    if (columns == 0 || images.rows() == 0) throw ContractError("empty image grid");
    const std::size_t n = images.rows();
    const std::size_t cols = std::min(columns, n), rows = (n + cols - 1) / cols;
    const std::size_t gw = cols * shape.width, gh = rows * shape.height;
    std::vector<std::uint8_t> pix(gw * gh * shape.channels, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t oy = (i / cols) * shape.height, ox = (i % cols) * shape.width;
        for (std::size_t y = 0; y < shape.height; ++y)
            for (std::size_t x = 0; x < shape.width; ++x)
                for (std::size_t c = 0; c < shape.channels; ++c) {
                    const double v = images.values()[i * shape.size() + (y * shape.width + x) * shape.channels + c];
                    pix[((oy + y) * gw + ox + x) * shape.channels + c] =
                        static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                }
    }
    ByteWriter w;
    w.raw((shape.channels == 1 ? "P5\n" : "P6\n") + std::to_string(gw) + " " + std::to_string(gh) + "\n255\n");
    w.raw(pix);
    write_file_bytes(path, w.bytes());
}

std::string EvalReport::to_csv() const {
    std::ostringstream s;
    s << "task,metric,value\n";
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& m = tasks[t];
        s << m.task << ",nll," << fmt(m.nll) << "\n";
        s << m.task << ",mse," << fmt(m.mse) << "\n";
        s << m.task << ",psnr," << fmt(m.psnr.db) << "\n";
        s << m.task << ",psnr_exact_match," << (m.psnr.exact_match ? 1 : 0) << "\n";
        s << m.task << ",ssim," << fmt(m.ssim) << "\n";
        if (m.accuracy) s << m.task << ",accuracy," << fmt(*m.accuracy) << "\n";
        if (t < routing.size())
            for (std::size_t k = 0; k < routing[t].size(); ++k)
                s << m.task << ",routing_expert_" << k << "," << routing[t][k] << "\n";
    }
    return s.str();
}

std::string EvalReport::summary() const {
    std::ostringstream s;
    s << "evaluation " << timestamp << "\n";
    s << std::left << std::setw(18) << "task" << std::setw(12) << "nll" << std::setw(12) << "mse" << std::setw(10)
      << "psnr" << std::setw(10) << "ssim" << "accuracy\n";
    for (const auto& m : tasks) {
        s << std::setw(18) << m.task << std::setw(12) << std::setprecision(5) << m.nll << std::setw(12) << m.mse
          << std::setw(10) << (m.psnr.exact_match ? std::string("exact") : fmt(std::round(m.psnr.db * 100) / 100))
          << std::setw(10) << std::setprecision(4) << m.ssim << (m.accuracy ? fmt(*m.accuracy) : std::string("-"))
          << "\n";
    }
    if (!routing.empty()) {
        s << "routing (rows: tasks, columns: experts)\n";
        for (std::size_t t = 0; t < routing.size(); ++t) {
            s << std::setw(18) << (t < tasks.size() ? tasks[t].task : std::to_string(t));
            for (auto c : routing[t]) s << std::setw(8) << c;
            s << "\n";
        }
    }
    return s.str();
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

}  // namespace lmvae::metrics
