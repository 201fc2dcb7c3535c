#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "resetedit/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor values. Each op returns a
// Var whose node keeps its parents alive; backward() walks the graph in
// reverse topological order.
namespace resetedit::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

class Var {
public:
    Var() : node_(std::make_shared<Node>()) {}
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(std::int64_t i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_->requires_grad; }
    // Zero-filled when backward() never reached this node.
    const Tensor& grad() const;
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 for a scalar root.
void backward(const Var& root);

// Disables graph construction in its scope (inference).
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

Var constant(Tensor value);
Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);

// x:[N,C,H,W] + v:[N,C] broadcast over space.
Var add_channel_bias(const Var& x, const Var& v);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

// x:[N,Cin,H,W], w:[Cout,Cin,k,k], b:[Cout].
Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride, std::int64_t pad);
// x:[N,F], w:[O,F], b:[O].
Var linear(const Var& x, const Var& w, const Var& b);
// table:[V,E], ids in [0,V) -> [N,E].
Var embedding(const Var& table, std::span<const std::int64_t> ids);

Var upsample2x(const Var& x);
// [N,C,H,W] -> [N,C*r*r,H/r,W/r] and its inverse.
Var pixel_unshuffle(const Var& x, std::int64_t r);
Var pixel_shuffle(const Var& x, std::int64_t r);
Var concat_channels(const Var& a, const Var& b);
Var reshape(const Var& x, Shape shape);

// Channelwise separable filter with reflect padding; `taps` has odd length.
Var separable_filter(const Var& x, std::span<const float> taps);

// Forward value of `quantized`, gradient passed to `x` unchanged.
Var straight_through(const Var& x, const Tensor& quantized);

// Mean of squared differences, scalar output.
Var mse(const Var& a, const Var& b);
Var mean_square(const Var& a);

}  // namespace resetedit::ag
