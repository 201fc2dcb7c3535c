#pragma once

#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "resetedit/diffusion.hpp"
#include "resetedit/nn.hpp"
#include "resetedit/types.hpp"

namespace resetedit {

enum class PredictorKind { toy_network, linear_gaussian_oracle, constant, zero };

std::string to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& name);

/// epsilon-prediction model. Implementations are immutable after construction
/// and safe to call concurrently.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual PredictorKind kind() const = 0;
    // x: [N,C,H,W], one condition per batch row. Returns the same shape.
    virtual Tensor predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const = 0;

    Latent predict(const Latent& x, const Timestep& t, Condition cond) const;
};

class ZeroPredictor final : public NoisePredictor {
public:
    PredictorKind kind() const override { return PredictorKind::zero; }
    Tensor predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const override;
};

/// Returns a fixed latent per condition, independent of x and t.
class ConstantPredictor final : public NoisePredictor {
public:
    ConstantPredictor(Latent null_output, std::map<std::int64_t, Latent> per_condition = {});
    PredictorKind kind() const override { return PredictorKind::constant; }
    Tensor predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const override;

private:
    Latent null_output_;
    std::map<std::int64_t, Latent> per_condition_;
};

/// Exact E[eps | x_t] when x_0 ~ N(mean_c, diag(variance)) with
/// x_t = sqrt(a) x_0 + sqrt(1 - a) eps:
///   E[eps | x_t] = sqrt(1 - a) (x_t - sqrt(a) mean_c) / (a variance + 1 - a).
class LinearGaussianOracle final : public NoisePredictor {
public:
    LinearGaussianOracle(Latent null_mean, Latent variance, std::map<std::int64_t, Latent> condition_means = {});
    PredictorKind kind() const override { return PredictorKind::linear_gaussian_oracle; }
    Tensor predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const override;

private:
    const Latent& mean_for(Condition c) const;

    Latent null_mean_;
    Latent variance_;
    std::map<std::int64_t, Latent> condition_means_;
};

struct DenoiserArch {
    std::int64_t latent_channels = 4;
    std::int64_t latent_size = 16;
    std::int64_t hidden = 32;
    std::int64_t time_features = 32;
    std::int64_t num_classes = 8;
};

/// Small convolutional epsilon-predictor: a two-resolution conv stack with the
/// timestep (sinusoidal features through an MLP) and the class embedding added
/// as per-channel biases. Row `num_classes` of the embedding table is the
/// learned null condition.
class ToyDenoiser final : public NoisePredictor {
public:
    ToyDenoiser(const DenoiserArch& arch, std::uint64_t seed);
    ToyDenoiser(const DenoiserArch& arch, nn::ParamStore params);

    PredictorKind kind() const override { return PredictorKind::toy_network; }
    Tensor predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const override;

    // Differentiable forward for training; one timestep per batch row.
    ag::Var forward(const ag::Var& x, std::span<const std::int64_t> train_steps,
                    std::span<const Condition> conds) const;

    const DenoiserArch& arch() const { return arch_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    void bind();
    std::int64_t condition_row(Condition c) const;

    DenoiserArch arch_;
    nn::ParamStore params_;
    nn::Linear time_in_, time_out_;
    ag::Var cond_table_;
    nn::Conv2d conv_in_, conv_down_, conv_mid_, conv_up_, conv_out_;
};

struct DenoiserTrainingConfig {
    float learning_rate = 1e-3f;
    std::int64_t steps = 2000;
    std::int64_t batch_size = 32;
    float condition_dropout = 0.1f;
    std::uint64_t seed = 0;
    std::int64_t train_steps = 1000;
    double beta_start = 0.00085;
    double beta_end = 0.012;

    void validate() const;
};

struct LabeledLatent {
    Latent latent;
    Condition cond;
};

struct TrainingReport {
    std::vector<double> loss_history;  // one entry per optimizer step
    double initial_eval_loss = 0.0;
    double final_eval_loss = 0.0;
};

// Mean epsilon-prediction loss on `data` with noise and timesteps drawn from `seed`.
double denoiser_eval_loss(const ToyDenoiser& net, std::span<const LabeledLatent> data,
                          const DenoiserTrainingConfig& cfg, std::uint64_t seed, std::int64_t samples = 256);

TrainingReport train_denoiser(ToyDenoiser& net, std::span<const LabeledLatent> data,
                              const DenoiserTrainingConfig& cfg, std::span<const LabeledLatent> held_out = {});

}  // namespace resetedit
