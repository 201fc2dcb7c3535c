#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "resetedit/autograd.hpp"

namespace resetedit::nn {

/// Named parameter arrays of one network. Trainable entries are leaf Vars with
/// requires_grad; buffers (codebooks, running statistics) are stored alongside
/// so checkpoints capture both.
class ParamStore {
public:
    ag::Var& add(const std::string& name, Tensor init, bool trainable = true);
    ag::Var& get(const std::string& name);
    const ag::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    struct Entry {
        std::string name;
        ag::Var var;
        bool trainable;
    };
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<ag::Var> trainable() const;
    std::int64_t trainable_count() const;

    void zero_grad();
    // Deep copy with fresh nodes, so the clone shares no state.
    ParamStore clone() const;
    // Overwrites values by name; shapes must match.
    void assign(const std::string& name, const Tensor& value);

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

struct Conv2d {
    ag::Var weight;
    ag::Var bias;
    std::int64_t stride = 1;
    std::int64_t pad = 0;

    static Conv2d create(ParamStore& store, const std::string& name, std::int64_t in_channels,
                         std::int64_t out_channels, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                         std::mt19937_64& rng, float gain = 1.0f);
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

struct Linear {
    ag::Var weight;
    ag::Var bias;

    static Linear create(ParamStore& store, const std::string& name, std::int64_t in_features,
                         std::int64_t out_features, std::mt19937_64& rng, float gain = 1.0f);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct AdamConfig {
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    bool amsgrad = false;
    // Global gradient-norm clip; <= 0 disables.
    float clip_norm = 0.0f;
};

/// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamConfig cfg);
    void step();
    void zero_grad();
    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(float lr) { cfg_.learning_rate = lr; }

private:
    std::vector<ag::Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_, v_max_;
    long t_ = 0;
};

// Sinusoidal features of a scalar (e.g. a timestep), length `width` (even).
Tensor sinusoidal_features(std::span<const float> positions, std::int64_t width, float max_period = 10000.0f);

}  // namespace resetedit::nn
