#include "resetedit/residual_codec.hpp"

#include <cmath>
#include <limits>

namespace resetedit {

Codebook::Codebook(Tensor entries) : entries_(std::move(entries)) {
    if (entries_.rank() != 2) throw ConfigError("codebook must be a K x D matrix");
    if (!entries_.all_finite()) throw ConfigError("codebook contains non-finite entries");
}

std::span<const float> Codebook::row(std::int64_t k) const {
    if (k < 0 || k >= size()) throw ContractError("codebook row out of range");
    return entries_.values().subspan(static_cast<std::size_t>(k * dim()), static_cast<std::size_t>(dim()));
}

QuantizeResult quantize(std::span<const float> feature, const Codebook& codebook) {
    if (codebook.size() == 0) throw ConfigError("quantize: empty codebook");
    if (static_cast<std::int64_t>(feature.size()) != codebook.dim())
        throw ContractError("quantize: feature length " + std::to_string(feature.size()) + " != codeword dim " +
                            std::to_string(codebook.dim()));
    QuantizeResult best{0, std::numeric_limits<double>::infinity()};
    for (std::int64_t k = 0; k < codebook.size(); ++k) {
        const auto row = codebook.row(k);
        double d = 0.0;
        for (std::size_t i = 0; i < feature.size(); ++i) {
            const double diff = static_cast<double>(feature[i]) - row[i];
            d += diff * diff;
        }
        if (d < best.distance_sq) best = {k, d};  // strict: ties keep the lower index
    }
    return best;
}

IndexMap::IndexMap(std::int64_t rows, std::int64_t cols, std::vector<std::int64_t> indices)
    : rows_(rows), cols_(cols), indices_(std::move(indices)) {
    if (rows < 0 || cols < 0 || static_cast<std::int64_t>(indices_.size()) != rows * cols)
        throw ContractError("index map size does not match its grid");
}

ResidualCodec::ResidualCodec(const CodecArch& arch, std::uint64_t seed, float beta) : arch_(arch), beta_(beta) {
    if (arch.codebook_size < 1) throw ConfigError("codebook size must be >= 1");
    if (arch.downsample < 1 || (arch.downsample & (arch.downsample - 1)) || arch.latent_size % arch.downsample)
        throw ConfigError("codec downsample must be a power of two dividing the latent size");
    std::mt19937_64 rng(seed);
    const auto h = arch.hidden;
    int level = 0;
    for (std::int64_t f = arch.downsample; f > 1; f /= 2, ++level)
        nn::Conv2d::create(params_, "enc.down" + std::to_string(level), level ? h : arch.latent_channels, h, 4, 2, 1,
                           rng);
    nn::Conv2d::create(params_, "enc.mid", level ? h : arch.latent_channels, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "enc.out", h, arch.code_dim, 1, 1, 0, rng);
    nn::Conv2d::create(params_, "dec.in", arch.code_dim, h, 1, 1, 0, rng);
    for (int l = 0; l < level; ++l) nn::Conv2d::create(params_, "dec.up" + std::to_string(l), h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "dec.out", h, arch.latent_channels, 3, 1, 1, rng);
    params_.add("codebook", Tensor::randn({arch.codebook_size, arch.code_dim}, rng, 0.1f), false);
    params_.add("ema.count", Tensor({arch.codebook_size}, 1.0f), false);
    params_.add("ema.sum", params_.get("codebook").value(), false);
    bind();
}

ResidualCodec::ResidualCodec(const CodecArch& arch, nn::ParamStore params, float beta)
    : arch_(arch), beta_(beta), params_(std::move(params)) {
    bind();
}

void ResidualCodec::bind() {
    enc_.clear();
    dec_.clear();
    auto conv = [&](const std::string& name, std::int64_t stride, std::int64_t pad) {
        nn::Conv2d c;
        c.weight = params_.get(name + ".weight");
        c.bias = params_.get(name + ".bias");
        c.stride = stride;
        c.pad = pad;
        return c;
    };
    int level = 0;
    for (std::int64_t f = arch_.downsample; f > 1; f /= 2, ++level) enc_.push_back(conv("enc.down" + std::to_string(level), 2, 1));
    enc_.push_back(conv("enc.mid", 1, 1));
    enc_.push_back(conv("enc.out", 1, 0));
    dec_.push_back(conv("dec.in", 1, 0));
    for (int l = 0; l < level; ++l) dec_.push_back(conv("dec.up" + std::to_string(l), 1, 1));
    dec_.push_back(conv("dec.out", 1, 1));
    const auto& cb = params_.get("codebook").value();
    if (cb.rank() != 2 || cb.dim(0) != arch_.codebook_size || cb.dim(1) != arch_.code_dim ||
        enc_.back().weight.dim(0) != arch_.code_dim)
        throw ConfigError("codec parameters do not match the architecture (codeword dim must equal encoder channels)");
}

void ResidualCodec::check_latent(const Tensor& z) const {
    const Shape want{arch_.latent_channels, arch_.latent_size, arch_.latent_size};
    if (z.shape() != want)
        throw ContractError("residual codec expects latent " + shape_string(want) + ", got " + shape_string(z.shape()));
}

ag::Var ResidualCodec::encode(const ag::Var& x) const {
    ag::Var h = x;
    for (std::size_t i = 0; i + 1 < enc_.size(); ++i) h = ag::silu(enc_[i](h));
    return enc_.back()(h);
}

ag::Var ResidualCodec::decode(const ag::Var& zq) const {
    ag::Var h = ag::silu(dec_.front()(zq));
    for (std::size_t i = 1; i + 1 < dec_.size(); ++i) h = ag::silu(dec_[i](ag::upsample2x(h)));
    return dec_.back()(h);
}

Codebook ResidualCodec::codebook() const { return Codebook(params_.get("codebook").value()); }

void ResidualCodec::set_codebook(const Tensor& entries) {
    params_.assign("codebook", entries);
    params_.assign("ema.sum", entries);
    params_.assign("ema.count", Tensor({arch_.codebook_size}, 1.0f));
}

Tensor ResidualCodec::quantize_features(const Tensor& features, std::vector<std::int64_t>* indices) const {
    if (features.rank() != 4 || features.dim(1) != arch_.code_dim)
        throw ContractError("quantize_features: expected [N,D,H',W'] with D = " + std::to_string(arch_.code_dim));
    const Codebook cb = codebook();
    const auto n = features.dim(0), d = features.dim(1), plane = features.dim(2) * features.dim(3);
    Tensor out(features.shape());
    if (indices) indices->assign(static_cast<std::size_t>(n * plane), 0);
    std::vector<float> vec(static_cast<std::size_t>(d));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t p = 0; p < plane; ++p) {
            for (std::int64_t c = 0; c < d; ++c) vec[static_cast<std::size_t>(c)] = features[(b * d + c) * plane + p];
            const auto q = quantize(vec, cb);
            const auto row = cb.row(q.index);
            for (std::int64_t c = 0; c < d; ++c) out[(b * d + c) * plane + p] = row[static_cast<std::size_t>(c)];
            if (indices) (*indices)[static_cast<std::size_t>(b * plane + p)] = q.index;
        }
    return out;
}

IndexMap ResidualCodec::compress(const Latent& z_r) const {
    check_latent(z_r);
    ag::NoGradGuard no_grad;
    const auto ze = encode(ag::constant(z_r.reshaped({1, z_r.dim(0), z_r.dim(1), z_r.dim(2)}))).value();
    std::vector<std::int64_t> idx;
    quantize_features(ze, &idx);
    return IndexMap(ze.dim(2), ze.dim(3), std::move(idx));
}

Latent ResidualCodec::reconstruct(const IndexMap& m) const {
    const auto g = grid_size();
    if (m.rows() != g || m.cols() != g)
        throw ContractError("index map must be " + std::to_string(g) + "x" + std::to_string(g));
    const Codebook cb = codebook();
    const auto d = arch_.code_dim, plane = g * g;
    Tensor zq({1, d, g, g});
    for (std::int64_t p = 0; p < plane; ++p) {
        const auto k = m.indices()[static_cast<std::size_t>(p)];
        if (k < 0 || k >= cb.size()) throw ContractError("index " + std::to_string(k) + " outside codebook");
        const auto row = cb.row(k);
        for (std::int64_t c = 0; c < d; ++c) zq[c * plane + p] = row[static_cast<std::size_t>(c)];
    }
    ag::NoGradGuard no_grad;
    const auto out = decode(ag::constant(zq)).value();
    return Latent(out.reshaped({arch_.latent_channels, arch_.latent_size, arch_.latent_size}));
}

CodecLoss codec_loss(const ResidualCodec& codec, const Tensor& batch, bool straight_through) {
    if (batch.rank() != 4) throw ContractError("codec_loss expects a [N,C,H,W] batch");
    const auto ze = codec.encode(ag::constant(batch));
    const Tensor zq = codec.quantize_features(ze.value());
    const auto zq_var = straight_through ? ag::straight_through(ze, zq) : ag::constant(zq);
    const auto decoded = codec.decode(zq_var);
    const auto recon = ag::mse(decoded, ag::constant(batch));
    const auto quanti = ag::mse(ze, ag::constant(zq));
    CodecLoss out;
    out.total = ag::add(recon, ag::scale(quanti, codec.beta()));
    out.recon = mean_squared_error(decoded.value(), batch);
    out.quanti = mean_squared_error(ze.value(), zq);
    return out;
}

double codec_reconstruction_mse(const ResidualCodec& codec, std::span<const Latent> samples) {
    double total = 0.0;
    for (const auto& z : samples) total += mean_squared_error(codec.reconstruct(codec.compress(z)), z);
    return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

namespace {

// Gathers the [N*H'*W', D] spatial vectors of an encoder output.
std::vector<std::vector<float>> spatial_vectors(const Tensor& ze) {
    const auto n = ze.dim(0), d = ze.dim(1), plane = ze.dim(2) * ze.dim(3);
    std::vector<std::vector<float>> out(static_cast<std::size_t>(n * plane), std::vector<float>(static_cast<std::size_t>(d)));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t p = 0; p < plane; ++p)
                out[static_cast<std::size_t>(b * plane + p)][static_cast<std::size_t>(c)] = ze[(b * d + c) * plane + p];
    return out;
}

}  // namespace

CodecTrainingReport train_codec(ResidualCodec& codec, std::span<const Latent> samples, const CodecTrainingConfig& cfg,
                                std::span<const Latent> held_out) {
    if (samples.empty()) throw ContractError("train_codec: empty sample set");
    if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("invalid codec training steps/batch size");
    const auto eval_set = held_out.empty() ? samples.first(std::min<std::size_t>(samples.size(), 64)) : held_out;
    CodecTrainingReport report;
    report.initial_recon_mse = codec_reconstruction_mse(codec, eval_set);
    if (cfg.steps == 0) {
        report.final_recon_mse = report.initial_recon_mse;
        return report;
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    auto draw = [&] {
        std::vector<Tensor> items;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i) items.push_back(samples[pick(rng)]);
        return stack(items);
    };

    const auto k = codec.arch().codebook_size, d = codec.arch().code_dim;
    {
        // Seed codewords from encoder outputs so none start far from the data.
        ag::NoGradGuard no_grad;
        const auto vecs = spatial_vectors(codec.encode(ag::constant(draw())).value());
        std::uniform_int_distribution<std::size_t> pv(0, vecs.size() - 1);
        Tensor init({k, d});
        for (std::int64_t j = 0; j < k; ++j) {
            const auto& v = vecs[pv(rng)];
            std::copy(v.begin(), v.end(), init.data() + j * d);
        }
        codec.set_codebook(init);
    }

    nn::Adam opt(codec.params().trainable(),
                 nn::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f, cfg.amsgrad, 1.0f});
    auto& ema_count = codec.params().get("ema.count").mutable_value();
    auto& ema_sum = codec.params().get("ema.sum").mutable_value();
    const float decay = cfg.ema_decay;
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        const Tensor batch = draw();
        opt.zero_grad();
        auto loss = codec_loss(codec, batch, true);
        const double value = loss.total.value().item();
        if (!std::isfinite(value)) throw TrainingError("codec loss diverged", step);
        report.loss_history.push_back(value);
        ag::backward(loss.total);
        opt.step();

        // EMA codebook update from this batch's assignments.
        ag::NoGradGuard no_grad;
        const auto ze = codec.encode(ag::constant(batch)).value();
        std::vector<std::int64_t> idx;
        codec.quantize_features(ze, &idx);
        const auto vecs = spatial_vectors(ze);
        std::vector<double> count(static_cast<std::size_t>(k), 0.0);
        std::vector<double> sum(static_cast<std::size_t>(k * d), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            count[static_cast<std::size_t>(idx[i])] += 1.0;
            for (std::int64_t c = 0; c < d; ++c) sum[static_cast<std::size_t>(idx[i] * d + c)] += vecs[i][static_cast<std::size_t>(c)];
        }
        double total_count = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            ema_count[j] = decay * ema_count[j] + (1.0f - decay) * static_cast<float>(count[static_cast<std::size_t>(j)]);
            total_count += ema_count[j];
            for (std::int64_t c = 0; c < d; ++c)
                ema_sum[j * d + c] = decay * ema_sum[j * d + c] + (1.0f - decay) * static_cast<float>(sum[static_cast<std::size_t>(j * d + c)]);
        }
        Tensor entries({k, d});
        std::uniform_int_distribution<std::size_t> pv(0, vecs.size() - 1);
        for (std::int64_t j = 0; j < k; ++j) {
            // Laplace-smoothed cluster size.
            const double n = (ema_count[j] + 1e-5) / (total_count + static_cast<double>(k) * 1e-5) * total_count;
            if (ema_count[j] < 1e-2f) {
                // Dead codeword: restart it on a random encoder output.
                const auto& v = vecs[pv(rng)];
                for (std::int64_t c = 0; c < d; ++c) {
                    entries[j * d + c] = v[static_cast<std::size_t>(c)];
                    ema_sum[j * d + c] = v[static_cast<std::size_t>(c)];
                }
                ema_count[j] = 1.0f;
                continue;
            }
            for (std::int64_t c = 0; c < d; ++c) entries[j * d + c] = static_cast<float>(ema_sum[j * d + c] / n);
        }
        codec.params().get("codebook").mutable_value() = entries;
    }
    report.final_recon_mse = codec_reconstruction_mse(codec, eval_set);
    return report;
}

}  // namespace resetedit
