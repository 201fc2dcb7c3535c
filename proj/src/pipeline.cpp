#include "resetedit/pipeline.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "resetedit/denoiser.hpp"
#include "resetedit/errors.hpp"

namespace resetedit {

LosslessTableCoder::LosslessTableCoder(std::int64_t codebook_size, std::int64_t rows, std::int64_t cols)
    : k_(codebook_size), rows_(rows), cols_(cols) {
    if (k_ < 2 || rows_ < 1 || cols_ < 1) throw ConfigError("lossless table coder needs K >= 2 and a non-empty grid");
}

IndexMap LosslessTableCoder::compress(const Latent& z_r) const {
    // Entry number written base K, least significant digit last.
    auto n = static_cast<std::int64_t>(table_.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rows_ * cols_));
    for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
        *it = n % k_;
        n /= k_;
    }
    if (n != 0) throw RangeError("lossless table coder is full");
    table_.push_back(z_r);
    return IndexMap(rows_, cols_, std::move(idx));
}

Latent LosslessTableCoder::reconstruct(const IndexMap& m) const {
    std::int64_t n = 0;
    for (auto v : m.indices()) {
        if (v < 0 || v >= k_) throw ContractError("index out of codebook range");
        n = n * k_ + v;
    }
    if (n >= static_cast<std::int64_t>(table_.size())) throw ContractError("index map names no stored residual");
    return table_[static_cast<std::size_t>(n)];
}

Latent IdentityCarrier::inject(const Latent& z, const BitMessage& m) const {
    last_ = m;
    return z;
}

BitMessage IdentityCarrier::extract(const Latent&) const { return last_; }

void Models::check() const {
    if (!denoiser || !pixel || !coder || !carrier) throw ContractError("pipeline models are incomplete");
}

Latent snap_to_grid(const Latent& z) {
    const float scale = std::ldexp(1.0f, kLatentGridBits), inv = std::ldexp(1.0f, -kLatentGridBits);
    Latent out = z;
    for (auto& v : out.values()) {
        if (!(std::abs(v) < kLatentGridLimit))
            throw RangeError("latent value " + std::to_string(v) + " outside the exact-arithmetic range");
        v = std::nearbyint(v * scale) * inv;
    }
    return out;
}

Latent starting_latent(std::uint64_t seed, const Shape& latent_shape) {
    std::mt19937_64 rng(seed);
    return snap_to_grid(Latent(Tensor::randn(latent_shape, rng)));
}

Latent generate_latent(const Latent& z_T, Condition cond, GuidanceConfig guidance, const Models& models) {
    return snap_to_grid(sample_trajectory(z_T, *models.denoiser, cond, guidance, models.schedule).final);
}

GenerationRecord generate_with_embedding(std::uint64_t seed, Condition cond, GuidanceConfig guidance,
                                         const Models& models) {
    models.check();
    GenerationRecord r;
    r.seed = seed;
    r.cond = cond;
    r.guidance = guidance.scale;
    r.z_T = starting_latent(seed, models.pixel->latent_shape());
    r.z_0 = generate_latent(r.z_T, cond, guidance, models);
    r.z_r = r.z_T - r.z_0;
    if (r.z_r + r.z_0 != r.z_T) throw ContractError("residual construction is not exact");
    r.m_r = models.coder->compress(r.z_r);
    r.message = serialize_indices(r.m_r, models.coder->codebook_size());
    r.z_0m = models.carrier->inject(r.z_0, r.message);
    r.image = models.pixel->decode(r.z_0m);
    return r;
}

RecoveryRecord recover_starting_latent(const Image& image, const Models& models, const RecoveryOptions& options,
                                       const GenerationRecord* truth) {
    models.check();
    RecoveryRecord r;
    const Image target = options.quantize_8bit ? quantize_8bit(image) : image;
    r.z_em = models.pixel->encode(target);
    auto opt = optimize_latent(r.z_em, target, *models.pixel, options.opt);
    r.z_em_opt = snap_to_grid(opt.latent);
    r.opt_loss_history = std::move(opt.loss_history);
    r.message = models.carrier->extract(r.z_em_opt);
    r.m_r = deserialize_indices(r.message, models.coder->codebook_size(), models.coder->grid_rows(),
                                models.coder->grid_cols());
    r.z_er = snap_to_grid(models.coder->reconstruct(r.m_r));
    r.z_T_star = r.z_em_opt + r.z_er;
    if (r.z_T_star - r.z_em_opt != r.z_er) throw ContractError("recovered latent construction is not exact");

    auto& d = r.diagnostics;
    d["opt_loss_initial"] = r.opt_loss_history.front();
    d["opt_loss_final"] = r.opt_loss_history.back();
    if (truth) {
        d["bit_accuracy"] = bit_accuracy(r.message, truth->message);
        d["mse_zT_star"] = mean_squared_error(r.z_T_star, truth->z_T);
        d["mse_z_em_vs_z0m"] = mean_squared_error(r.z_em, truth->z_0m);
        d["mse_z_em_opt_vs_z0m"] = mean_squared_error(r.z_em_opt, truth->z_0m);
        d["mse_residual"] = mean_squared_error(r.z_er, truth->z_r);
        d["delta_mse"] = mean_squared_error(truth->z_0m, truth->z_0);
    }
    return r;
}

Image edit(const Latent& z_T_star, Condition new_cond, GuidanceConfig guidance, const Models& models) {
    models.check();
    return models.pixel->decode(generate_latent(z_T_star, new_cond, guidance, models));
}

double psnr_from_mse(double mse) {
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

Metrics metrics(const Tensor& a, const Tensor& b) {
    Metrics m;
    m.mse = mean_squared_error(a, b);
    m.psnr = psnr_from_mse(m.mse);
    return m;
}

namespace {

double rms(const Tensor& t) { return t.numel() ? std::sqrt(sum_squares(t) / static_cast<double>(t.numel())) : 0.0; }

}  // namespace

std::vector<StepNorm> step_error_norms(const Latent& z_T, Condition cond, GuidanceConfig guidance, const Models& models) {
    if (!models.denoiser) throw ContractError("step_error_norms needs a denoiser");
    std::vector<StepNorm> out;
    Latent x = z_T;
    for (auto t = models.schedule.num_steps(); t >= 1; --t) {
        const auto rep = decompose_step_error(x, t, *models.denoiser, cond, guidance, models.schedule);
        out.push_back({t, rms(rep.condition_drift), rms(rep.estimation_error), rms(rep.total)});
        x = ddim_step(x, t, *models.denoiser, cond, guidance, models.schedule);
    }
    return out;
}

BaselineReport compare_baseline(const GenerationRecord& record, const Models& models, const RecoveryOptions& options,
                                GuidanceConfig edit_guidance) {
    models.check();
    BaselineReport report;
    const Image reference = models.pixel->decode(record.z_0);

    auto row = [&](std::string method, const Latent& z_hat) {
        BaselineRow r;
        r.method = std::move(method);
        r.latent_mse = mean_squared_error(z_hat, record.z_T);
        const auto m = metrics(edit(z_hat, record.cond, edit_guidance, models), reference);
        r.replay_mse = m.mse;
        r.replay_psnr = m.psnr;
        return r;
    };

    const auto rec = recover_starting_latent(record.image, models, options, &record);
    report.rows.push_back(row("resetedit", rec.z_T_star));

    const Image target = options.quantize_8bit ? quantize_8bit(record.image) : record.image;
    const auto inverted = invert_trajectory(models.pixel->encode(target), *models.denoiser, models.schedule).final;
    report.rows.push_back(row("ddim_inversion", inverted));

    report.steps = step_error_norms(record.z_T, record.cond, GuidanceConfig(record.guidance), models);
    return report;
}

std::string BaselineReport::to_tsv() const {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "method\tlatent_mse\treplay_mse\treplay_psnr\n";
    for (const auto& r : rows) os << r.method << '\t' << r.latent_mse << '\t' << r.replay_mse << '\t' << r.replay_psnr << '\n';
    os << "\nt\tdrift_rms\testimation_rms\ttotal_rms\n";
    for (const auto& s : steps) os << s.t << '\t' << s.drift_rms << '\t' << s.estimation_rms << '\t' << s.total_rms << '\n';
    return os.str();
}

}  // namespace resetedit
