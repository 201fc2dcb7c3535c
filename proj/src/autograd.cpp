#include "resetedit/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "resetedit/errors.hpp"
#include "resetedit/kernels.hpp"

namespace resetedit::ag {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

// Builds the output node; records parents and the backward closure only when
// some input participates in differentiation.
Var make_result(Tensor value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> backward_fn) {
    Var out(std::move(value));
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const Var* in : inputs) any = any || in->requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Var* in : inputs) node.parents.push_back(in->node());
    node.backward_fn = std::move(backward_fn);
    return out;
}

void accumulate(Node& parent, const Tensor& delta) {
    if (!parent.requires_grad) return;
    parent.ensure_grad() += delta;
}

float sigmoidf(float v) { return 1.0f / (1.0f + std::exp(-v)); }

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (!has_grad) {
        grad = Tensor(value.shape(), 0.0f);
        has_grad = true;
    }
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
    if (node_->has_grad) node_->grad.fill(0.0f);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
    if (root.value().numel() != 1) throw ContractError("backward() needs a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad().fill(1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->has_grad) node->backward_fn(*node);
    }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var detach(const Var& x) { return Var(x.value(), false); }

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    return make_result(a.value() + b.value(), {&a, &b}, [](Node& self) {
        accumulate(*self.parents[0], self.grad);
        accumulate(*self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    return make_result(a.value() - b.value(), {&a, &b}, [](Node& self) {
        accumulate(*self.parents[0], self.grad);
        accumulate(*self.parents[1], self.grad * -1.0f);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {&a, &b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var scale(const Var& a, float s) {
    return make_result(a.value() * s, {&a}, [s](Node& self) { accumulate(*self.parents[0], self.grad * s); });
}

Var add_channel_bias(const Var& x, const Var& v) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || v.shape() != Shape{xs[0], xs[1]})
        throw ContractError("add_channel_bias: expected x [N,C,H,W] and v [N,C], got " + shape_string(xs) + " and " +
                            shape_string(v.shape()));
    const auto plane = xs[2] * xs[3];
    Tensor out = x.value();
    for (std::int64_t nc = 0; nc < xs[0] * xs[1]; ++nc)
        for (std::int64_t p = 0; p < plane; ++p) out[nc * plane + p] += v.value()[nc];
    return make_result(std::move(out), {&x, &v}, [plane](Node& self) {
        accumulate(*self.parents[0], self.grad);
        auto& pv = *self.parents[1];
        if (pv.requires_grad) {
            auto& g = pv.ensure_grad();
            for (std::int64_t nc = 0; nc < g.numel(); ++nc) {
                double s = 0.0;
                for (std::int64_t p = 0; p < plane; ++p) s += self.grad[nc * plane + p];
                g[nc] += static_cast<float>(s);
            }
        }
    });
}

Var silu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v * sigmoidf(v);
    return make_result(std::move(out), {&x}, [](Node& self) {
        auto& px = *self.parents[0];
        auto& g = px.ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const float v = px.value[i], s = sigmoidf(v);
            g[i] += self.grad[i] * (s * (1.0f + v * (1.0f - s)));
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = sigmoidf(v);
    return make_result(std::move(out), {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const float s = self.value[i];
            g[i] += self.grad[i] * s * (1.0f - s);
        }
    });
}

Var tanh(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = std::tanh(v);
    return make_result(std::move(out), {&x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const float t = self.value[i];
            g[i] += self.grad[i] * (1.0f - t * t);
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride, std::int64_t pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || b.shape() != Shape{ws[0]})
        throw ContractError("conv2d: incompatible shapes x " + shape_string(xs) + " w " + shape_string(ws) + " b " +
                            shape_string(b.shape()));
    kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
    if (g.out_h() <= 0 || g.out_w() <= 0) throw ContractError("conv2d: empty output");
    Tensor out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
    kernels::parallel::conv2d_forward(g, x.value().data(), w.value().data(), b.value().data(), out.data());
    return make_result(std::move(out), {&x, &w, &b}, [g](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        kernels::parallel::conv2d_backward(g, px.value.data(), pw.value.data(), self.grad.data(),
                                           px.requires_grad ? px.ensure_grad().data() : nullptr,
                                           pw.requires_grad ? pw.ensure_grad().data() : nullptr,
                                           pb.requires_grad ? pb.ensure_grad().data() : nullptr);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1] || b.shape() != Shape{ws[0]})
        throw ContractError("linear: incompatible shapes x " + shape_string(xs) + " w " + shape_string(ws));
    const auto n = xs[0], f = xs[1], o = ws[0];
    Tensor out(Shape{n, o});
    kernels::parallel::gemm(false, true, n, o, f, x.value().data(), w.value().data(), out.data(), false);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < o; ++j) out[i * o + j] += b.value()[j];
    return make_result(std::move(out), {&x, &w, &b}, [n, f, o](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad)
            kernels::parallel::gemm(false, false, n, f, o, self.grad.data(), pw.value.data(),
                                    px.ensure_grad().data(), true);
        if (pw.requires_grad)
            kernels::parallel::gemm(true, false, o, f, n, self.grad.data(), px.value.data(),
                                    pw.ensure_grad().data(), true);
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < o; ++j) g[j] += self.grad[i * o + j];
        }
    });
}

Var embedding(const Var& table, std::span<const std::int64_t> ids) {
    const auto& ts = table.shape();
    if (ts.size() != 2) throw ContractError("embedding: table must be rank 2");
    const auto rows = ts[0], width = ts[1];
    std::vector<std::int64_t> idx(ids.begin(), ids.end());
    Tensor out(Shape{static_cast<std::int64_t>(idx.size()), width});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= rows) throw ContractError("embedding: id out of range");
        std::copy_n(table.value().data() + idx[i] * width, width, out.data() + static_cast<std::int64_t>(i) * width);
    }
    return make_result(std::move(out), {&table}, [idx, width](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::int64_t j = 0; j < width; ++j)
                g[idx[i] * width + j] += self.grad[static_cast<std::int64_t>(i) * width + j];
    });
}

Var upsample2x(const Var& x) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ContractError("upsample2x: expected rank 4");
    const auto nc = xs[0] * xs[1], h = xs[2], w = xs[3];
    Tensor out(Shape{xs[0], xs[1], 2 * h, 2 * w});
    for (std::int64_t c = 0; c < nc; ++c)
        for (std::int64_t y = 0; y < 2 * h; ++y)
            for (std::int64_t xx = 0; xx < 2 * w; ++xx)
                out[(c * 2 * h + y) * 2 * w + xx] = x.value()[(c * h + y / 2) * w + xx / 2];
    return make_result(std::move(out), {&x}, [nc, h, w](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::int64_t c = 0; c < nc; ++c)
            for (std::int64_t y = 0; y < 2 * h; ++y)
                for (std::int64_t xx = 0; xx < 2 * w; ++xx)
                    g[(c * h + y / 2) * w + xx / 2] += self.grad[(c * 2 * h + y) * 2 * w + xx];
    });
}

namespace {

// Flat index of the shuffled layout for every unshuffled element.
std::vector<std::int64_t> shuffle_map(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                                      std::int64_t r) {
    const auto oh = h / r, ow = w / r, oc = c * r * r;
    std::vector<std::int64_t> map(static_cast<std::size_t>(n * c * h * w));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    const auto och = (ch * r + y % r) * r + x % r;
                    map[static_cast<std::size_t>(((b * c + ch) * h + y) * w + x)] =
                        ((b * oc + och) * oh + y / r) * ow + x / r;
                }
    return map;
}

Var permute(const Var& x, Shape shape, std::vector<std::int64_t> map, bool forward) {
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto src = forward ? static_cast<std::int64_t>(i) : map[i];
        const auto dst = forward ? map[i] : static_cast<std::int64_t>(i);
        out[dst] = x.value()[src];
    }
    return make_result(std::move(out), {&x}, [map = std::move(map), forward](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i) {
            const auto src = forward ? static_cast<std::int64_t>(i) : map[i];
            const auto dst = forward ? map[i] : static_cast<std::int64_t>(i);
            g[src] += self.grad[dst];
        }
    });
}

}  // namespace

Var pixel_unshuffle(const Var& x, std::int64_t r) {
    const auto& s = x.shape();
    if (s.size() != 4 || r < 1 || s[2] % r || s[3] % r) throw ContractError("pixel_unshuffle: bad shape");
    return permute(x, {s[0], s[1] * r * r, s[2] / r, s[3] / r}, shuffle_map(s[0], s[1], s[2], s[3], r), true);
}

Var pixel_shuffle(const Var& x, std::int64_t r) {
    const auto& s = x.shape();
    if (s.size() != 4 || r < 1 || s[1] % (r * r)) throw ContractError("pixel_shuffle: bad shape");
    const auto c = s[1] / (r * r);
    return permute(x, {s[0], c, s[2] * r, s[3] * r}, shuffle_map(s[0], c, s[2] * r, s[3] * r, r), false);
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
        throw ContractError("concat_channels: incompatible " + shape_string(as) + " and " + shape_string(bs));
    const auto n = as[0], plane = as[2] * as[3], ca = as[1] * plane, cb = bs[1] * plane;
    Tensor out(Shape{n, as[1] + bs[1], as[2], as[3]});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + i * ca, ca, out.data() + i * (ca + cb));
        std::copy_n(b.value().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    return make_result(std::move(out), {&a, &b}, [n, ca, cb](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::int64_t i = 0; i < n; ++i) {
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::int64_t j = 0; j < ca; ++j) g[i * ca + j] += self.grad[i * (ca + cb) + j];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::int64_t j = 0; j < cb; ++j) g[i * cb + j] += self.grad[i * (ca + cb) + ca + j];
            }
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    return make_result(x.value().reshaped(std::move(shape)), {&x}, [](Node& self) {
        auto& px = *self.parents[0];
        auto& g = px.ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var separable_filter(const Var& x, std::span<const float> taps) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ContractError("separable_filter: expected rank 4");
    if (taps.size() % 2 == 0) throw ContractError("separable_filter: even tap count");
    const std::vector<float> k(taps.begin(), taps.end());
    const auto nc = xs[0] * xs[1], h = xs[2], w = xs[3];
    const auto r = static_cast<std::int64_t>(k.size() / 2);

    // Applies the filter (or its adjoint) along rows then columns.
    auto run = [k, r, nc, h, w](const Tensor& in, Tensor& out, bool adjoint) {
        Tensor tmp(in.shape(), 0.0f);
        for (std::int64_t c = 0; c < nc; ++c) {
            const float* src = in.data() + c * h * w;
            float* mid = tmp.data() + c * h * w;
            float* dst = out.data() + c * h * w;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx)
                    for (std::int64_t t = -r; t <= r; ++t) {
                        const auto sx = reflect_index(xx + t, w);
                        if (adjoint)
                            mid[y * w + sx] += k[static_cast<std::size_t>(t + r)] * src[y * w + xx];
                        else
                            mid[y * w + xx] += k[static_cast<std::size_t>(t + r)] * src[y * w + sx];
                    }
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx)
                    for (std::int64_t t = -r; t <= r; ++t) {
                        const auto sy = reflect_index(y + t, h);
                        if (adjoint)
                            dst[sy * w + xx] += k[static_cast<std::size_t>(t + r)] * mid[y * w + xx];
                        else
                            dst[y * w + xx] += k[static_cast<std::size_t>(t + r)] * mid[sy * w + xx];
                    }
        }
    };
    Tensor out(xs, 0.0f);
    run(x.value(), out, false);
    return make_result(std::move(out), {&x}, [run](Node& self) {
        auto& px = *self.parents[0];
        // Row and column passes act on independent axes and commute.
        Tensor g(self.grad.shape(), 0.0f);
        run(self.grad, g, true);
        px.ensure_grad() += g;
    });
}

Var straight_through(const Var& x, const Tensor& quantized) {
    require_same_shape(x.value(), quantized, "straight_through");
    return make_result(quantized, {&x}, [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const auto n = a.value().numel();
    const double m = mean_squared_error(a.value(), b.value());
    return make_result(Tensor::scalar(static_cast<float>(m)), {&a, &b}, [n](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const float s = 2.0f * self.grad[0] / static_cast<float>(n);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) g[i] += s * (pa.value[i] - pb.value[i]);
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) g[i] -= s * (pa.value[i] - pb.value[i]);
        }
    });
}

Var mean_square(const Var& a) {
    const auto n = a.value().numel();
    const double m = sum_squares(a.value()) / static_cast<double>(n);
    return make_result(Tensor::scalar(static_cast<float>(m)), {&a}, [n](Node& self) {
        auto& pa = *self.parents[0];
        const float s = 2.0f * self.grad[0] / static_cast<float>(n);
        auto& g = pa.ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) g[i] += s * pa.value[i];
    });
}

}  // namespace resetedit::ag
