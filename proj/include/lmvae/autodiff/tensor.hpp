#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lmvae::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One vertex of the reverse-mode graph. Leaves have no parents and no
/// backward function; interior nodes own references to their parents, so a
/// graph lives exactly as long as the handle to its output.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    /// Zero-filled gradient buffer, allocated on demand.
    std::vector<double>& ensure_grad();
};

/// Value-semantic handle to a graph node. Copies alias the same node, which
/// is how parameters are shared between composed networks.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor parameter(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    /// Row-major [rows, cols] constant.
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();
    void clear_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Constant copy of the current values, cut from the graph.
    Tensor detach() const;

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Suspends graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call. Nodes not reachable from
/// `loss` are left untouched.
void backward(const Tensor& loss);

}  // namespace lmvae::ad
