#include "resetedit/nn.hpp"

#include <cmath>

#include "resetedit/errors.hpp"

namespace resetedit::nn {

ag::Var& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    if (contains(name)) throw ContractError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, ag::Var(std::move(init), trainable), trainable});
    return entries_.back().var;
}

ag::Var& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].var;
}

const ag::Var& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].var;
}

std::vector<ag::Var> ParamStore::trainable() const {
    std::vector<ag::Var> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.var);
    return out;
}

std::int64_t ParamStore::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.var.value().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, e.var.value(), e.trainable);
    return out;
}

void ParamStore::assign(const std::string& name, const Tensor& value) {
    auto& var = get(name);
    require_same_shape(var.value(), value, ("assign " + name).c_str());
    var.mutable_value() = value;
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, std::int64_t in_channels,
                      std::int64_t out_channels, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                      std::mt19937_64& rng, float gain) {
    const float fan_in = static_cast<float>(in_channels * kernel * kernel);
    const float bound = gain * std::sqrt(3.0f / fan_in);
    Conv2d c;
    c.weight = store.add(name + ".weight",
                         Tensor::uniform({out_channels, in_channels, kernel, kernel}, rng, -bound, bound));
    c.bias = store.add(name + ".bias", Tensor({out_channels}, 0.0f));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Linear Linear::create(ParamStore& store, const std::string& name, std::int64_t in_features,
                      std::int64_t out_features, std::mt19937_64& rng, float gain) {
    const float bound = gain * std::sqrt(3.0f / static_cast<float>(in_features));
    Linear l;
    l.weight = store.add(name + ".weight", Tensor::uniform({out_features, in_features}, rng, -bound, bound));
    l.bias = store.add(name + ".bias", Tensor({out_features}, 0.0f));
    return l;
}

Adam::Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.shape(), 0.0f);
        v_.emplace_back(p.shape(), 0.0f);
        v_max_.emplace_back(cfg_.amsgrad ? p.shape() : Shape{}, 0.0f);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    float clip_scale = 1.0f;
    if (cfg_.clip_norm > 0.0f) {
        double total = 0.0;
        for (const auto& p : params_) total += sum_squares(p.grad());
        const double norm = std::sqrt(total);
        if (norm > cfg_.clip_norm) clip_scale = static_cast<float>(cfg_.clip_norm / norm);
    }
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& value = params_[k].mutable_value();
        const auto& grad = params_[k].grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const float g = grad[i] * clip_scale;
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
            float second = v[i];
            if (cfg_.amsgrad) {
                v_max_[k][i] = std::max(v_max_[k][i], v[i]);
                second = v_max_[k][i];
            }
            value[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(second / bc2) + cfg_.eps);
        }
    }
}

Tensor sinusoidal_features(std::span<const float> positions, std::int64_t width, float max_period) {
    if (width % 2 != 0) throw ContractError("sinusoidal_features: width must be even");
    const auto n = static_cast<std::int64_t>(positions.size());
    const auto half = width / 2;
    Tensor out({n, width});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
            const double arg = positions[static_cast<std::size_t>(i)] * freq;
            out[i * width + j] = static_cast<float>(std::cos(arg));
            out[i * width + half + j] = static_cast<float>(std::sin(arg));
        }
    return out;
}

}  // namespace resetedit::nn
