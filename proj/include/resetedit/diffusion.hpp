#pragma once

#include <string>
#include <vector>

#include "resetedit/types.hpp"

namespace resetedit {

class NoisePredictor;

struct StepCoefficients {
    double gamma = 1.0;
    double phi = 0.0;
};

// gamma = sqrt(a_prev / a_t), phi = -sqrt(a_prev (1 - a_t) / a_t) + sqrt(1 - a_prev).
StepCoefficients step_coefficients(double alpha_prev, double alpha_t);

/// Cumulative alphas a_0 = 1 > a_1 > ... > a_T > 0 over the sampling
/// sub-schedule, each tied to the training step it was taken from.
class NoiseSchedule {
public:
    NoiseSchedule() : alphas_{1.0}, train_steps_{0} {}
    NoiseSchedule(std::vector<double> alphas, std::vector<std::int64_t> train_steps);

    // Linear betas over `train_steps` training steps, strided down to `num_steps`.
    static NoiseSchedule linear(std::int64_t num_steps, std::int64_t train_steps = 1000, double beta_start = 0.00085,
                                double beta_end = 0.012);
    // Full training-length cumulative alphas for a linear beta schedule, index s = 1..train_steps.
    static std::vector<double> training_alphas(std::int64_t train_steps, double beta_start, double beta_end);

    std::int64_t num_steps() const { return static_cast<std::int64_t>(alphas_.size()) - 1; }
    double alpha(std::int64_t t) const;
    Timestep timestep(std::int64_t t) const;
    StepCoefficients coefficients(std::int64_t t) const;

    // Tab-separated rows "t alpha gamma phi" with a header line.
    std::string table() const;

private:
    std::vector<double> alphas_;
    std::vector<std::int64_t> train_steps_;
};

Latent ddim_step(const Latent& x_t, std::int64_t t, const NoisePredictor& denoiser, Condition cond,
                 GuidanceConfig guidance, const NoiseSchedule& schedule);

// Always uses the null condition.
Latent invert_step(const Latent& x_prev, std::int64_t t, const NoisePredictor& denoiser,
                   const NoiseSchedule& schedule);

struct Trajectory {
    Latent final;
    std::vector<Latent> states;  // states.front() is the input, states.back() == final
};

Trajectory sample_trajectory(const Latent& z_T, const NoisePredictor& denoiser, Condition cond,
                             GuidanceConfig guidance, const NoiseSchedule& schedule);
Trajectory invert_trajectory(const Latent& z_0, const NoisePredictor& denoiser, const NoiseSchedule& schedule);

/// Split of the one-step inversion error x'_t - x_t into the guidance
/// mismatch term and the epsilon(x_t) ~ epsilon(x_{t-1}) approximation term,
/// both already scaled by phi_t / gamma_t.
struct StepErrorReport {
    std::int64_t t = 0;
    Latent condition_drift;
    Latent estimation_error;
    Latent total;
};

StepErrorReport decompose_step_error(const Latent& x_t, std::int64_t t, const NoisePredictor& denoiser, Condition cond,
                                     GuidanceConfig guidance, const NoiseSchedule& schedule);

}  // namespace resetedit
