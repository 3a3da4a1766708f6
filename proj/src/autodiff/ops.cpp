#include "lmvae/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "lmvae/common/errors.hpp"

namespace lmvae::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

Tensor make_result(Shape shape, std::vector<double> value, const char* op, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_matrix(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// Elementwise unary op with derivative expressed through (input, output).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
    std::vector<double> out(a.numel());
    auto in = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), op, {a}, [df](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    });
}

enum class Bcast { None, Left, Right };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::None;
    if (a.numel() == 1) return Bcast::Left;
    if (b.numel() == 1) return Bcast::Right;
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not compatible");
}

// da/db partials of f(x, y) evaluated per element.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
    const Bcast kind = broadcast_kind(a, b, op);
    const Shape shape = kind == Bcast::Left ? b.shape() : a.shape();
    const std::size_t n = numel(shape);
    auto av = a.values();
    auto bv = b.values();
    auto ai = [kind](std::size_t i) { return kind == Bcast::Left ? std::size_t{0} : i; };
    auto bi = [kind](std::size_t i) { return kind == Bcast::Right ? std::size_t{0} : i; };
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ai(i)], bv[bi(i)]);
    return make_result(shape, std::move(out), op, {a, b}, [=](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[ai(i)] += self.grad[i] * da(pa.value[ai(i)], pb.value[bi(i)]);
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[bi(i)] += self.grad[i] * db(pa.value[ai(i)], pb.value[bi(i)]);
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const auto n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(n * m);
    Map(out.data(), n, m).noalias() = MapC(a.values().data(), n, k) * MapC(b.values().data(), k, m);
    return make_result({n, m}, std::move(out), "matmul", {a, b}, [n, k, m](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        MapC dc(self.grad.data(), n, m);
        if (pa.requires_grad)
            Map(pa.ensure_grad().data(), n, k).noalias() += dc * MapC(pb.value.data(), k, m).transpose();
        if (pb.requires_grad)
            Map(pb.ensure_grad().data(), k, m).noalias() += MapC(pa.value.data(), n, k).transpose() * dc;
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_matrix(x, "linear");
    require_matrix(weight, "linear");
    const auto n = x.rows(), k = x.cols(), m = weight.cols();
    if (weight.rows() != k)
        throw DimensionError("linear: input width " + std::to_string(k) + " does not match weight " +
                             shape_str(weight.shape()));
    if (bias.numel() != m) throw DimensionError("linear: bias has " + std::to_string(bias.numel()) + " entries, need " +
                                                std::to_string(m));
    std::vector<double> out(n * m);
    Map y(out.data(), n, m);
    y.noalias() = MapC(x.values().data(), n, k) * MapC(weight.values().data(), k, m);
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), m);
    return make_result({n, m}, std::move(out), "linear", {x, weight, bias}, [n, k, m](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        MapC dy(self.grad.data(), n, m);
        if (px.requires_grad)
            Map(px.ensure_grad().data(), n, k).noalias() += dy * MapC(pw.value.data(), k, m).transpose();
        if (pw.requires_grad)
            Map(pw.ensure_grad().data(), k, m).noalias() += MapC(px.value.data(), n, k).transpose() * dy;
        if (pb.requires_grad) Eigen::Map<Eigen::RowVectorXd>(pb.ensure_grad().data(), m) += dy.colwise().sum();
    });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    require_matrix(x, "add_row");
    const auto n = x.rows(), m = x.cols();
    if (row.numel() != m) throw DimensionError("add_row: row has " + std::to_string(row.numel()) + " entries, need " +
                                               std::to_string(m));
    std::vector<double> out(x.values().begin(), x.values().end());
    auto r = row.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += r[j];
    return make_result({n, m}, std::move(out), "add_row", {x, row}, [n, m](Node& self) {
        Node& px = parent(self, 0);
        Node& pr = parent(self, 1);
        if (px.requires_grad) {
            auto& g = px.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pr.requires_grad) {
            auto& g = pr.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary(
        a, "add_scalar", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
    return unary(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary(
        a, "clamp_min", [floor](double x) { return std::max(x, floor); },
        [floor](double x, double) { return x >= floor ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor softmax_rows(const Tensor& a) {
    require_matrix(a, "softmax_rows");
    const auto n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    auto in = a.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * m;
        double* o = out.data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) total += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) o[j] /= total;
    }
    return make_result({n, m}, std::move(out), "softmax_rows", {a}, [n, m](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double* y = self.value.data() + i * m;
            const double* dy = self.grad.data() + i * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    require_matrix(a, "log_softmax_rows");
    const auto n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    auto in = a.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] - lse;
    }
    return make_result({n, m}, std::move(out), "log_softmax_rows", {a}, [n, m](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double* y = self.value.data() + i * m;
            const double* dy = self.grad.data() + i * m;
            double total = 0.0;
            for (std::size_t j = 0; j < m; ++j) total += dy[j];
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += dy[j] - std::exp(y[j]) * total;
        }
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_result({}, {total}, "sum", {a}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor row_sum(const Tensor& a) {
    require_matrix(a, "row_sum");
    const auto n = a.rows(), m = a.cols();
    std::vector<double> out(n, 0.0);
    auto in = a.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i] += in[i * m + j];
    return make_result({n}, std::move(out), "row_sum", {a}, [n, m](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_cols");
    const auto n = a.rows(), m = a.cols();
    if (begin > end || end > m)
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside width " +
                             std::to_string(m));
    const auto w = end - begin;
    std::vector<double> out(n * w);
    auto in = a.values();
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(in.data() + i * m + begin, w, out.data() + i * w);
    return make_result({n, w}, std::move(out), "slice_cols", {a}, [n, m, w, begin](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * m + begin + j] += self.grad[i * w + j];
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix(a, "concat_cols");
    require_matrix(b, "concat_cols");
    const auto n = a.rows();
    if (b.rows() != n)
        throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto ma = a.cols(), mb = b.cols(), m = ma + mb;
    std::vector<double> out(n * m);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(av.data() + i * ma, ma, out.data() + i * m);
        std::copy_n(bv.data() + i * mb, mb, out.data() + i * m + ma);
    }
    return make_result({n, m}, std::move(out), "concat_cols", {a, b}, [n, ma, mb, m](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < ma; ++j) g[i * ma + j] += self.grad[i * m + j];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < mb; ++j) g[i * mb + j] += self.grad[i * m + ma + j];
        }
    });
}

}  // namespace lmvae::ad
