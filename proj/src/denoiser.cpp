#include "resetedit/denoiser.hpp"

#include <cmath>
#include <numeric>

namespace resetedit {

std::string to_string(PredictorKind kind) {
    switch (kind) {
        case PredictorKind::toy_network: return "toy_network";
        case PredictorKind::linear_gaussian_oracle: return "linear_gaussian_oracle";
        case PredictorKind::constant: return "constant";
        case PredictorKind::zero: return "zero";
    }
    throw ConfigError("unknown predictor kind");
}

PredictorKind predictor_kind_from_string(const std::string& name) {
    for (auto k : {PredictorKind::toy_network, PredictorKind::linear_gaussian_oracle, PredictorKind::constant,
                   PredictorKind::zero})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown predictor kind '" + name + "'");
}

Latent NoisePredictor::predict(const Latent& x, const Timestep& t, Condition cond) const {
    const Tensor batch = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    const Condition conds[1] = {cond};
    Tensor out = predict_batch(batch, t, conds);
    if (out.numel() != x.numel()) throw ContractError("noise predictor changed the latent size");
    return Latent(out.reshaped(x.shape()));
}

namespace {

void check_batch(const Tensor& x, std::span<const Condition> conds) {
    if (x.rank() != 4) throw ContractError("predict_batch expects [N,C,H,W], got " + shape_string(x.shape()));
    if (static_cast<std::int64_t>(conds.size()) != x.dim(0))
        throw ContractError("predict_batch: one condition per batch row required");
}

}  // namespace

Tensor ZeroPredictor::predict_batch(const Tensor& x, const Timestep&, std::span<const Condition> conds) const {
    check_batch(x, conds);
    return Tensor(x.shape(), 0.0f);
}

ConstantPredictor::ConstantPredictor(Latent null_output, std::map<std::int64_t, Latent> per_condition)
    : null_output_(std::move(null_output)), per_condition_(std::move(per_condition)) {
    for (const auto& [id, v] : per_condition_) require_same_shape(v, null_output_, "ConstantPredictor");
}

Tensor ConstantPredictor::predict_batch(const Tensor& x, const Timestep&, std::span<const Condition> conds) const {
    check_batch(x, conds);
    const auto per = null_output_.numel();
    if (x.numel() != per * x.dim(0)) throw ContractError("ConstantPredictor: latent geometry mismatch");
    Tensor out(x.shape());
    for (std::size_t n = 0; n < conds.size(); ++n) {
        auto it = per_condition_.find(conds[n].id());
        const Latent& src = (conds[n].is_null() || it == per_condition_.end()) ? null_output_ : it->second;
        std::copy(src.values().begin(), src.values().end(), out.data() + static_cast<std::int64_t>(n) * per);
    }
    return out;
}

LinearGaussianOracle::LinearGaussianOracle(Latent null_mean, Latent variance,
                                           std::map<std::int64_t, Latent> condition_means)
    : null_mean_(std::move(null_mean)), variance_(std::move(variance)), condition_means_(std::move(condition_means)) {
    require_same_shape(null_mean_, variance_, "LinearGaussianOracle");
    for (float v : variance_.values())
        if (!(v >= 0.0f)) throw ConfigError("oracle variance must be non-negative");
    for (const auto& [id, m] : condition_means_) require_same_shape(m, null_mean_, "LinearGaussianOracle");
}

const Latent& LinearGaussianOracle::mean_for(Condition c) const {
    if (c.is_null()) return null_mean_;
    auto it = condition_means_.find(c.id());
    return it == condition_means_.end() ? null_mean_ : it->second;
}

Tensor LinearGaussianOracle::predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const {
    check_batch(x, conds);
    const auto per = null_mean_.numel();
    if (x.numel() != per * x.dim(0)) throw ContractError("LinearGaussianOracle: latent geometry mismatch");
    const double a = t.alpha_bar;
    const double sa = std::sqrt(a), s1a = std::sqrt(1.0 - a);
    Tensor out(x.shape());
    for (std::size_t n = 0; n < conds.size(); ++n) {
        const Latent& m = mean_for(conds[n]);
        const auto off = static_cast<std::int64_t>(n) * per;
        for (std::int64_t i = 0; i < per; ++i) {
            const double denom = a * variance_[i] + (1.0 - a);
            out[off + i] = static_cast<float>(s1a * (x[off + i] - sa * m[i]) / denom);
        }
    }
    return out;
}

ToyDenoiser::ToyDenoiser(const DenoiserArch& arch, std::uint64_t seed) : arch_(arch) {
    std::mt19937_64 rng(seed);
    const auto h = arch.hidden, c = arch.latent_channels;
    time_in_ = nn::Linear::create(params_, "time.in", arch.time_features, 2 * h, rng);
    time_out_ = nn::Linear::create(params_, "time.out", 2 * h, h, rng);
    // Zero rows: a class that never receives gradient stays indistinguishable from the others.
    params_.add("cond.table", Tensor({arch.num_classes + 1, h}, 0.0f));
    conv_in_ = nn::Conv2d::create(params_, "conv.in", c, h, 3, 1, 1, rng);
    conv_down_ = nn::Conv2d::create(params_, "conv.down", h, h, 3, 2, 1, rng);
    conv_mid_ = nn::Conv2d::create(params_, "conv.mid", h, h, 3, 1, 1, rng);
    conv_up_ = nn::Conv2d::create(params_, "conv.up", h, h, 3, 1, 1, rng);
    conv_out_ = nn::Conv2d::create(params_, "conv.out", h, c, 3, 1, 1, rng, 0.2f);
    bind();
}

ToyDenoiser::ToyDenoiser(const DenoiserArch& arch, nn::ParamStore params) : arch_(arch), params_(std::move(params)) {
    bind();
}

void ToyDenoiser::bind() {
    auto conv = [&](const std::string& name, std::int64_t stride) {
        nn::Conv2d c;
        c.weight = params_.get(name + ".weight");
        c.bias = params_.get(name + ".bias");
        c.stride = stride;
        c.pad = 1;
        return c;
    };
    auto lin = [&](const std::string& name) {
        return nn::Linear{params_.get(name + ".weight"), params_.get(name + ".bias")};
    };
    time_in_ = lin("time.in");
    time_out_ = lin("time.out");
    cond_table_ = params_.get("cond.table");
    conv_in_ = conv("conv.in", 1);
    conv_down_ = conv("conv.down", 2);
    conv_mid_ = conv("conv.mid", 1);
    conv_up_ = conv("conv.up", 1);
    conv_out_ = conv("conv.out", 1);
    if (cond_table_.dim(0) != arch_.num_classes + 1 || cond_table_.dim(1) != arch_.hidden)
        throw ConfigError("denoiser parameters do not match the architecture");
}

std::int64_t ToyDenoiser::condition_row(Condition c) const {
    if (c.is_null()) return arch_.num_classes;
    if (c.id() < 0 || c.id() >= arch_.num_classes)
        throw ContractError("condition id " + std::to_string(c.id()) + " outside [0, num_classes)");
    return c.id();
}

ag::Var ToyDenoiser::forward(const ag::Var& x, std::span<const std::int64_t> train_steps,
                             std::span<const Condition> conds) const {
    const auto n = x.dim(0);
    if (static_cast<std::int64_t>(train_steps.size()) != n || static_cast<std::int64_t>(conds.size()) != n)
        throw ContractError("ToyDenoiser: per-row timesteps and conditions required");
    std::vector<float> positions(train_steps.begin(), train_steps.end());
    std::vector<std::int64_t> rows;
    for (auto c : conds) rows.push_back(condition_row(c));

    auto temb = ag::constant(nn::sinusoidal_features(positions, arch_.time_features));
    temb = time_out_(ag::silu(time_in_(temb)));
    const auto emb = ag::add(temb, ag::embedding(cond_table_, rows));

    const auto h0 = ag::silu(ag::add_channel_bias(conv_in_(x), emb));
    const auto h1 = ag::silu(conv_down_(h0));
    const auto h2 = ag::silu(ag::add_channel_bias(conv_mid_(h1), emb));
    const auto h3 = ag::silu(conv_up_(ag::add(ag::upsample2x(h2), h0)));
    return conv_out_(h3);
}

Tensor ToyDenoiser::predict_batch(const Tensor& x, const Timestep& t, std::span<const Condition> conds) const {
    check_batch(x, conds);
    if (x.dim(1) != arch_.latent_channels) throw ContractError("ToyDenoiser: channel mismatch");
    ag::NoGradGuard no_grad;
    const std::vector<std::int64_t> steps(static_cast<std::size_t>(x.dim(0)), t.train_step);
    return forward(ag::constant(x), steps, conds).value();
}

void DenoiserTrainingConfig::validate() const {
    if (!(condition_dropout >= 0.0f && condition_dropout <= 1.0f))
        throw ConfigError("condition_dropout must lie in [0, 1]");
    if (steps < 0 || batch_size < 1) throw ConfigError("invalid denoiser training steps/batch size");
    if (!(learning_rate > 0.0f)) throw ConfigError("learning rate must be positive");
}

namespace {

struct NoisedBatch {
    Tensor x;
    Tensor eps;
    std::vector<std::int64_t> steps;
    std::vector<Condition> conds;
};

NoisedBatch draw_batch(std::span<const LabeledLatent> data, std::span<const double> alphas, std::int64_t batch,
                       float dropout, std::mt19937_64& rng) {
    const auto& shape = data[0].latent.shape();
    const auto per = data[0].latent.numel();
    NoisedBatch b;
    b.x = Tensor({batch, shape[0], shape[1], shape[2]});
    b.eps = Tensor::randn(b.x.shape(), rng);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<std::int64_t> step(1, static_cast<std::int64_t>(alphas.size()) - 1);
    std::uniform_real_distribution<float> coin(0.0f, 1.0f);
    for (std::int64_t n = 0; n < batch; ++n) {
        const auto& item = data[pick(rng)];
        const auto s = step(rng);
        const double a = alphas[static_cast<std::size_t>(s)];
        const float sa = static_cast<float>(std::sqrt(a)), s1a = static_cast<float>(std::sqrt(1.0 - a));
        for (std::int64_t i = 0; i < per; ++i) b.x[n * per + i] = sa * item.latent[i] + s1a * b.eps[n * per + i];
        b.steps.push_back(s);
        b.conds.push_back(coin(rng) < dropout ? Condition::null() : item.cond);
    }
    return b;
}

}  // namespace

double denoiser_eval_loss(const ToyDenoiser& net, std::span<const LabeledLatent> data,
                          const DenoiserTrainingConfig& cfg, std::uint64_t seed, std::int64_t samples) {
    if (data.empty()) throw ContractError("denoiser_eval_loss: empty data");
    const auto alphas = NoiseSchedule::training_alphas(cfg.train_steps, cfg.beta_start, cfg.beta_end);
    std::mt19937_64 rng(seed);
    ag::NoGradGuard no_grad;
    double total = 0.0;
    std::int64_t done = 0;
    while (done < samples) {
        const auto n = std::min<std::int64_t>(64, samples - done);
        auto b = draw_batch(data, alphas, n, 0.0f, rng);
        const auto pred = net.forward(ag::constant(b.x), b.steps, b.conds);
        total += mean_squared_error(pred.value(), b.eps) * static_cast<double>(n);
        done += n;
    }
    return total / static_cast<double>(samples);
}

TrainingReport train_denoiser(ToyDenoiser& net, std::span<const LabeledLatent> data,
                              const DenoiserTrainingConfig& cfg, std::span<const LabeledLatent> held_out) {
    if (data.empty()) throw ContractError("train_denoiser: empty data");
    cfg.validate();
    const auto eval_set = held_out.empty() ? data : held_out;
    TrainingReport report;
    report.initial_eval_loss = denoiser_eval_loss(net, eval_set, cfg, cfg.seed ^ 0x5eedULL);
    const auto alphas = NoiseSchedule::training_alphas(cfg.train_steps, cfg.beta_start, cfg.beta_end);
    nn::Adam opt(net.params().trainable(), nn::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f, false, 1.0f});
    std::mt19937_64 rng(cfg.seed);
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        auto b = draw_batch(data, alphas, cfg.batch_size, cfg.condition_dropout, rng);
        opt.zero_grad();
        const auto loss = ag::mse(net.forward(ag::constant(b.x), b.steps, b.conds), ag::constant(b.eps));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw TrainingError("denoiser loss diverged", step);
        report.loss_history.push_back(value);
        ag::backward(loss);
        opt.step();
    }
    report.final_eval_loss = denoiser_eval_loss(net, eval_set, cfg, cfg.seed ^ 0x5eedULL);
    return report;
}

}  // namespace resetedit
