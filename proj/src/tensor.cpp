#include "resetedit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "resetedit/errors.hpp"

namespace resetedit {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ContractError("negative dimension in shape " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
        throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_string(shape_));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, float stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, float lo, float hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : t.data_) v = dist(rng);
    return t;
}

float Tensor::item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw ContractError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ContractError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
}

Tensor& Tensor::operator+=(const Tensor& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    require_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(float s) {
    for (auto& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, float s) { return a *= s; }
Tensor operator*(float s, Tensor a) { return a *= s; }

double sum_squares(const Tensor& a) {
    double s = 0.0;
    for (float v : a.values()) s += static_cast<double>(v) * v;
    return s;
}

double sum_squared_error(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sum_squared_error");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
    return a.numel() ? sum_squared_error(a, b) / static_cast<double>(a.numel()) : 0.0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (float v : a.values()) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ContractError("stack of zero tensors");
    Shape shape = items[0].shape();
    shape.insert(shape.begin(), static_cast<std::int64_t>(items.size()));
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(shape_numel(shape)));
    for (const auto& t : items) {
        require_same_shape(t, items[0], "stack");
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor slice0(const Tensor& t, std::int64_t i) {
    if (t.rank() < 1 || i < 0 || i >= t.dim(0)) throw ContractError("slice0 index out of range");
    Shape shape(t.shape().begin() + 1, t.shape().end());
    const auto n = shape_numel(shape);
    std::vector<float> data(t.data() + i * n, t.data() + (i + 1) * n);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace resetedit
