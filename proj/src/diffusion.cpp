#include "resetedit/diffusion.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "resetedit/denoiser.hpp"

namespace resetedit {

StepCoefficients step_coefficients(double alpha_prev, double alpha_t) {
    if (!(alpha_t > 0.0 && alpha_t <= 1.0 && alpha_prev > 0.0 && alpha_prev <= 1.0))
        throw RangeError("alphas must lie in (0, 1]");
    StepCoefficients c;
    c.gamma = std::sqrt(alpha_prev / alpha_t);
    c.phi = -std::sqrt(alpha_prev * (1.0 - alpha_t) / alpha_t) + std::sqrt(1.0 - alpha_prev);
    return c;
}

NoiseSchedule::NoiseSchedule(std::vector<double> alphas, std::vector<std::int64_t> train_steps)
    : alphas_(std::move(alphas)), train_steps_(std::move(train_steps)) {
    if (alphas_.empty() || alphas_.front() != 1.0) throw ConfigError("schedule must start at alpha_0 = 1");
    if (train_steps_.size() != alphas_.size()) throw ConfigError("schedule: train step table length mismatch");
    for (std::size_t t = 1; t < alphas_.size(); ++t) {
        if (!(alphas_[t] > 0.0 && alphas_[t] < alphas_[t - 1]))
            throw ConfigError("schedule alphas must be positive and strictly decreasing");
    }
}

std::vector<double> NoiseSchedule::training_alphas(std::int64_t train_steps, double beta_start, double beta_end) {
    if (train_steps < 1) throw ConfigError("train_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0)) throw ConfigError("invalid beta range");
    std::vector<double> cumulative(static_cast<std::size_t>(train_steps) + 1, 1.0);
    for (std::int64_t s = 1; s <= train_steps; ++s) {
        const double frac = train_steps == 1 ? 0.0 : static_cast<double>(s - 1) / static_cast<double>(train_steps - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        cumulative[static_cast<std::size_t>(s)] = cumulative[static_cast<std::size_t>(s - 1)] * (1.0 - beta);
    }
    return cumulative;
}

NoiseSchedule NoiseSchedule::linear(std::int64_t num_steps, std::int64_t train_steps, double beta_start,
                                    double beta_end) {
    if (num_steps < 0 || num_steps > train_steps) throw ConfigError("num_steps must lie in [0, train_steps]");
    const auto cumulative = training_alphas(train_steps, beta_start, beta_end);
    std::vector<double> alphas{1.0};
    std::vector<std::int64_t> steps{0};
    // Sub-step t maps to training step round(t * train_steps / num_steps).
    for (std::int64_t t = 1; t <= num_steps; ++t) {
        const auto s = (t * train_steps + num_steps / 2) / num_steps;
        alphas.push_back(cumulative[static_cast<std::size_t>(s)]);
        steps.push_back(s);
    }
    return NoiseSchedule(std::move(alphas), std::move(steps));
}

double NoiseSchedule::alpha(std::int64_t t) const {
    if (t < 0 || t > num_steps()) throw RangeError("timestep " + std::to_string(t) + " outside schedule");
    return alphas_[static_cast<std::size_t>(t)];
}

Timestep NoiseSchedule::timestep(std::int64_t t) const {
    const double a = alpha(t);
    return Timestep{train_steps_[static_cast<std::size_t>(t)], static_cast<float>(a)};
}

StepCoefficients NoiseSchedule::coefficients(std::int64_t t) const {
    if (t < 1 || t > num_steps()) throw RangeError("timestep " + std::to_string(t) + " outside [1, T]");
    return step_coefficients(alphas_[static_cast<std::size_t>(t - 1)], alphas_[static_cast<std::size_t>(t)]);
}

std::string NoiseSchedule::table() const {
    std::ostringstream os;
    os << "t\ttrain_step\talpha\tgamma\tphi\n" << std::setprecision(9);
    for (std::int64_t t = 0; t <= num_steps(); ++t) {
        os << t << '\t' << train_steps_[static_cast<std::size_t>(t)] << '\t' << alphas_[static_cast<std::size_t>(t)];
        if (t == 0) {
            os << "\t-\t-\n";
        } else {
            const auto c = coefficients(t);
            os << '\t' << c.gamma << '\t' << c.phi << '\n';
        }
    }
    return os.str();
}

namespace {

// Conditional and unconditional predictions at one point. The conditional
// branch is skipped when w == 0.
struct GuidedPrediction {
    Latent uncond;
    Latent cond;
    bool has_cond = false;
};

GuidedPrediction predict_pair(const Latent& x, const Timestep& ts, const NoisePredictor& denoiser, Condition cond,
                              GuidanceConfig guidance) {
    GuidedPrediction out;
    if (guidance.scale == 0.0f || cond.is_null()) {
        out.uncond = denoiser.predict(x, ts, Condition::null());
        out.cond = out.uncond;
        return out;
    }
    const Tensor batch = stack(std::vector<Tensor>{x, x});
    const Condition conds[2] = {Condition::null(), cond};
    const Tensor eps = denoiser.predict_batch(batch.reshaped({2, x.dim(0), x.dim(1), x.dim(2)}), ts, conds);
    out.uncond = Latent(slice0(eps, 0));
    out.cond = Latent(slice0(eps, 1));
    out.has_cond = true;
    return out;
}

void require_latent_shape(const Latent& got, const Latent& expected, const char* what) {
    if (got.shape() != expected.shape())
        throw ContractError(std::string(what) + ": denoiser returned " + shape_string(got.shape()) +
                            " for input " + shape_string(expected.shape()));
}

}  // namespace

Latent ddim_step(const Latent& x_t, std::int64_t t, const NoisePredictor& denoiser, Condition cond,
                 GuidanceConfig guidance, const NoiseSchedule& schedule) {
    const auto coef = schedule.coefficients(t);
    const auto eps = predict_pair(x_t, schedule.timestep(t), denoiser, cond, guidance);
    require_latent_shape(eps.uncond, x_t, "ddim_step");
    const double w = guidance.scale;
    Latent out(x_t.dim(0), x_t.dim(1), x_t.dim(2));
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double e0 = eps.uncond[i];
        const double guided = eps.has_cond ? e0 + w * (static_cast<double>(eps.cond[i]) - e0) : e0;
        out[i] = static_cast<float>(coef.gamma * x_t[i] + coef.phi * guided);
    }
    return out;
}

Latent invert_step(const Latent& x_prev, std::int64_t t, const NoisePredictor& denoiser,
                   const NoiseSchedule& schedule) {
    const auto coef = schedule.coefficients(t);
    const Latent eps = denoiser.predict(x_prev, schedule.timestep(t), Condition::null());
    require_latent_shape(eps, x_prev, "invert_step");
    Latent out(x_prev.dim(0), x_prev.dim(1), x_prev.dim(2));
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(x_prev[i] / coef.gamma - coef.phi / coef.gamma * eps[i]);
    return out;
}

Trajectory sample_trajectory(const Latent& z_T, const NoisePredictor& denoiser, Condition cond,
                             GuidanceConfig guidance, const NoiseSchedule& schedule) {
    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(schedule.num_steps()) + 1);
    traj.states.push_back(z_T);
    for (std::int64_t t = schedule.num_steps(); t >= 1; --t)
        traj.states.push_back(ddim_step(traj.states.back(), t, denoiser, cond, guidance, schedule));
    traj.final = traj.states.back();
    return traj;
}

Trajectory invert_trajectory(const Latent& z_0, const NoisePredictor& denoiser, const NoiseSchedule& schedule) {
    Trajectory traj;
    traj.states.reserve(static_cast<std::size_t>(schedule.num_steps()) + 1);
    traj.states.push_back(z_0);
    for (std::int64_t t = 1; t <= schedule.num_steps(); ++t)
        traj.states.push_back(invert_step(traj.states.back(), t, denoiser, schedule));
    traj.final = traj.states.back();
    return traj;
}

StepErrorReport decompose_step_error(const Latent& x_t, std::int64_t t, const NoisePredictor& denoiser, Condition cond,
                                     GuidanceConfig guidance, const NoiseSchedule& schedule) {
    const auto coef = schedule.coefficients(t);
    const auto ts = schedule.timestep(t);
    const auto eps_t = predict_pair(x_t, ts, denoiser, cond, guidance);
    require_latent_shape(eps_t.uncond, x_t, "decompose_step_error");
    const Latent x_prev = ddim_step(x_t, t, denoiser, cond, guidance, schedule);
    const Latent x_inv = invert_step(x_prev, t, denoiser, schedule);
    const Latent eps_prev = denoiser.predict(x_prev, ts, Condition::null());

    const double ratio = coef.phi / coef.gamma;
    const double w = guidance.scale;
    StepErrorReport r;
    r.t = t;
    r.condition_drift = Latent(x_t.dim(0), x_t.dim(1), x_t.dim(2));
    r.estimation_error = Latent(x_t.dim(0), x_t.dim(1), x_t.dim(2));
    r.total = Latent(x_t.dim(0), x_t.dim(1), x_t.dim(2));
    for (std::int64_t i = 0; i < x_t.numel(); ++i) {
        const double e0 = eps_t.uncond[i];
        r.condition_drift[i] =
            eps_t.has_cond ? static_cast<float>(ratio * w * (static_cast<double>(eps_t.cond[i]) - e0)) : 0.0f;
        r.estimation_error[i] = static_cast<float>(ratio * (e0 - static_cast<double>(eps_prev[i])));
        r.total[i] = static_cast<float>(static_cast<double>(x_inv[i]) - x_t[i]);
    }
    return r;
}

}  // namespace resetedit
