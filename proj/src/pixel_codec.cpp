#include "resetedit/pixel_codec.hpp"

#include <cmath>

namespace resetedit {

namespace {

Tensor as_batch(const Tensor& t) { return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}); }

}  // namespace

Image PixelCodec::decode(const Latent& z) const {
    if (z.shape() != latent_shape())
        throw ContractError("decode: latent " + shape_string(z.shape()) + " does not match codec geometry " +
                            shape_string(latent_shape()));
    ag::NoGradGuard no_grad;
    const auto out = decode_batch(ag::constant(as_batch(z)));
    return Image(out.value().reshaped(image_shape()));
}

IdentityPixelCodec::IdentityPixelCodec(Shape image_shape) : shape_(std::move(image_shape)) {
    Image probe{Tensor(shape_)};
    (void)probe;
}

Latent IdentityPixelCodec::encode(const Image& image) const {
    if (image.shape() != shape_) throw ContractError("encode: image geometry mismatch");
    return Latent(static_cast<const Tensor&>(image));
}

ToyVae::ToyVae(const VaeArch& arch, std::uint64_t seed) : arch_(arch) {
    std::mt19937_64 rng(seed);
    const auto h = arch.hidden, c = arch.latent_channels;
    if (arch.image_size % 2 != 0) throw ConfigError("image size must be even");
    nn::Conv2d::create(params_, "enc.in", 12, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "enc.mid", h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "enc.mid2", h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "enc.out", h, c, 1, 1, 0, rng);
    nn::Conv2d::create(params_, "dec.in", c, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "dec.mid", h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "dec.mid2", h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "dec.out", h, 12, 3, 1, 1, rng);
    params_.add("latent.scale", Tensor({1}, 1.0f), false);
    bind();
}

ToyVae::ToyVae(const VaeArch& arch, nn::ParamStore params) : arch_(arch), params_(std::move(params)) { bind(); }

void ToyVae::bind() {
    auto conv = [&](const std::string& name, std::int64_t pad) {
        nn::Conv2d c;
        c.weight = params_.get(name + ".weight");
        c.bias = params_.get(name + ".bias");
        c.pad = pad;
        return c;
    };
    enc_in_ = conv("enc.in", 1);
    enc_mid_ = conv("enc.mid", 1);
    enc_mid2_ = conv("enc.mid2", 1);
    enc_out_ = conv("enc.out", 0);
    dec_in_ = conv("dec.in", 1);
    dec_mid_ = conv("dec.mid", 1);
    dec_mid2_ = conv("dec.mid2", 1);
    dec_out_ = conv("dec.out", 1);
    if (enc_out_.weight.dim(0) != arch_.latent_channels || enc_in_.weight.dim(0) != arch_.hidden)
        throw ConfigError("VAE parameters do not match the architecture");
}

Shape ToyVae::latent_shape() const { return {arch_.latent_channels, arch_.image_size / 2, arch_.image_size / 2}; }
Shape ToyVae::image_shape() const { return {3, arch_.image_size, arch_.image_size}; }

void ToyVae::set_scale_factor(float s) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw ContractError("scale factor must be positive");
    params_.assign("latent.scale", Tensor({1}, s));
}

ag::Var ToyVae::encoder_mean(const ag::Var& x) const {
    auto h = ag::pixel_unshuffle(x, 2);
    h = ag::silu(enc_in_(h));
    h = ag::silu(enc_mid_(h));
    h = ag::silu(enc_mid2_(h));
    return enc_out_(h);
}

ag::Var ToyVae::decode_unscaled(const ag::Var& z) const {
    auto h = ag::silu(dec_in_(z));
    h = ag::silu(dec_mid_(h));
    h = ag::silu(dec_mid2_(h));
    return ag::sigmoid(ag::pixel_shuffle(dec_out_(h), 2));
}

ag::Var ToyVae::encode_batch(const ag::Var& x) const { return ag::scale(encoder_mean(x), scale_factor()); }

ag::Var ToyVae::decode_batch(const ag::Var& z) const { return decode_unscaled(ag::scale(z, 1.0f / scale_factor())); }

Latent ToyVae::encode(const Image& image) const {
    if (image.shape() != image_shape())
        throw ContractError("encode: image " + shape_string(image.shape()) + " does not match codec geometry " +
                            shape_string(image_shape()));
    ag::NoGradGuard no_grad;
    return Latent(encode_batch(ag::constant(as_batch(image))).value().reshaped(latent_shape()));
}

ag::Var vae_loss(const ToyVae& vae, const Tensor& images, const Tensor& noise, float kl_weight, VaeLoss* parts) {
    const auto mean = vae.encoder_mean(ag::constant(images));
    require_same_shape(mean.value(), noise, "vae_loss noise");
    const auto z = ag::add(mean, ag::constant(noise * vae.arch().posterior_std));
    const auto recon = ag::mse(vae.decode_unscaled(z), ag::constant(images));
    // Fixed posterior variance: only the mean term of the Gaussian KL varies.
    const auto kl = ag::scale(ag::mean_square(mean), 0.5f);
    const auto total = ag::add(recon, ag::scale(kl, kl_weight));
    if (parts) {
        parts->recon = recon.value().item();
        parts->kl = kl.value().item();
        parts->total = total.value().item();
    }
    return total;
}

namespace {

double cycle_mse(const ToyVae& vae, std::span<const Latent> latents) {
    double sum = 0.0;
    for (const auto& z : latents) sum += mean_squared_error(vae.encode(vae.decode(z)), z);
    return latents.empty() ? 0.0 : sum / static_cast<double>(latents.size());
}

}  // namespace

EncoderAlignmentReport align_encoder(ToyVae& vae, std::span<const Latent> latents, std::span<const Image> anchors,
                                     const EncoderAlignmentConfig& cfg) {
    if (latents.empty() || anchors.empty()) throw ContractError("align_encoder: empty latent or anchor set");
    if (cfg.steps < 0 || cfg.batch_size < 2) throw ConfigError("invalid encoder alignment steps/batch size");
    EncoderAlignmentReport report;
    report.initial_cycle_mse = cycle_mse(vae, latents);
    if (cfg.steps == 0) {
        report.final_cycle_mse = report.initial_cycle_mse;
        return report;
    }
    std::vector<Tensor> decoded, anchor_images, anchor_latents;
    for (const auto& z : latents) decoded.push_back(vae.decode(z));
    for (const auto& x : anchors) {
        anchor_images.push_back(x);
        anchor_latents.push_back(vae.encode(x));
    }
    std::vector<ag::Var> encoder;
    for (const auto& e : vae.params().entries())
        if (e.trainable && e.name.starts_with("enc.")) encoder.push_back(e.var);
    nn::Adam opt(encoder, nn::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f, false, 1.0f});
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick_z(0, latents.size() - 1), pick_x(0, anchors.size() - 1);
    const auto half = cfg.batch_size / 2;
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> gi, gz, ai, az;
        for (std::int64_t b = 0; b < half; ++b) {
            const auto k = pick_z(rng), j = pick_x(rng);
            gi.push_back(decoded[k]);
            gz.push_back(latents[k]);
            ai.push_back(anchor_images[j]);
            az.push_back(anchor_latents[j]);
        }
        opt.zero_grad();
        // Decoder outputs enter as constants, so only the encoder sees gradients.
        const auto cycle = ag::mse(vae.encode_batch(ag::constant(stack(gi))), ag::constant(stack(gz)));
        const auto keep = ag::mse(vae.encode_batch(ag::constant(stack(ai))), ag::constant(stack(az)));
        const auto loss = ag::add(cycle, keep);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw TrainingError("encoder alignment loss diverged", step);
        report.loss_history.push_back(value);
        ag::backward(loss);
        opt.step();
    }
    report.final_cycle_mse = cycle_mse(vae, latents);
    return report;
}

double reconstruction_mse(const PixelCodec& codec, std::span<const Image> images) {
    double total = 0.0;
    for (const auto& img : images) total += mean_squared_error(codec.decode(codec.encode(img)), img);
    return images.empty() ? 0.0 : total / static_cast<double>(images.size());
}

VaeTrainingReport train_pixel_codec(ToyVae& vae, std::span<const Image> images, const VaeTrainingConfig& cfg) {
    if (images.empty()) throw ContractError("train_pixel_codec: empty image set");
    if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("invalid VAE training steps/batch size");
    VaeTrainingReport report;
    report.initial_recon_mse = reconstruction_mse(vae, images.first(std::min<std::size_t>(images.size(), 64)));
    if (cfg.steps == 0) {
        report.final_recon_mse = report.initial_recon_mse;
        return report;
    }
    // Train in unscaled units; the scale factor is refit at the end.
    vae.set_scale_factor(1.0f);
    nn::Adam opt(vae.params().trainable(), nn::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f, false, 1.0f});
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
    const auto lat = vae.latent_shape();
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> batch;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i) batch.push_back(images[pick(rng)]);
        const Tensor x = stack(batch);
        const Tensor noise = Tensor::randn({cfg.batch_size, lat[0], lat[1], lat[2]}, rng);
        opt.zero_grad();
        const auto loss = vae_loss(vae, x, noise, cfg.kl_weight);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw TrainingError("VAE loss diverged", step);
        report.loss_history.push_back(value);
        ag::backward(loss);
        opt.step();
    }
    // Fit the scale so encoded latents have unit standard deviation.
    double sum = 0.0, sq = 0.0;
    std::int64_t count = 0;
    {
        ag::NoGradGuard no_grad;
        for (std::size_t i = 0; i < images.size(); ++i) {
            const auto mean = vae.encoder_mean(ag::constant(as_batch(images[i]))).value();
            for (float v : mean.values()) {
                sum += v;
                sq += static_cast<double>(v) * v;
            }
            count += mean.numel();
        }
    }
    const double m = sum / static_cast<double>(count);
    const double sd = std::sqrt(std::max(1e-12, sq / static_cast<double>(count) - m * m));
    vae.set_scale_factor(static_cast<float>(1.0 / sd));
    report.final_recon_mse = reconstruction_mse(vae, images.first(std::min<std::size_t>(images.size(), 64)));
    return report;
}

void LatentOptConfig::validate() const {
    if (steps < 0) throw ConfigError("latent optimization steps must be >= 0");
    if (!(step_size > 0.0f)) throw ConfigError("latent optimization step size must be positive");
}

double latent_objective(const PixelCodec& codec, const Latent& z, const Image& target, Latent* gradient) {
    if (z.shape() != codec.latent_shape()) throw ContractError("latent_objective: latent geometry mismatch");
    if (target.shape() != codec.image_shape()) throw ContractError("latent_objective: image geometry mismatch");
    if (!gradient) {
        ag::NoGradGuard no_grad;
        const auto img = codec.decode_batch(ag::constant(as_batch(z)));
        return sum_squared_error(img.value(), as_batch(target));
    }
    ag::Var zv(as_batch(z), true);
    const auto img = codec.decode_batch(zv);
    const auto n = static_cast<float>(img.value().numel());
    // mse * numel == sum of squares
    const auto loss = ag::scale(ag::mse(img, ag::constant(as_batch(target))), n);
    ag::backward(loss);
    *gradient = Latent(zv.grad().reshaped(z.shape()));
    return sum_squared_error(img.value(), as_batch(target));
}

LatentOptResult optimize_latent(const Latent& z_init, const Image& target, const PixelCodec& codec,
                                const LatentOptConfig& cfg) {
    cfg.validate();
    LatentOptResult result;
    result.latent = z_init;
    Latent grad;
    double loss = latent_objective(codec, result.latent, target, cfg.steps > 0 ? &grad : nullptr);
    result.loss_history.push_back(loss);
    float step = cfg.step_size;
    for (std::int64_t i = 0; i < cfg.steps; ++i) {
        if (!grad.all_finite()) throw OptimizationError("non-finite latent gradient", i);
        if (!cfg.backtracking) {
            result.latent = result.latent - Latent(grad * step);
            loss = latent_objective(codec, result.latent, target, &grad);
        } else {
            for (int h = 0; h <= cfg.max_halvings; ++h) {
                Latent candidate = result.latent - Latent(grad * step);
                Latent cand_grad;
                const double cand_loss = latent_objective(codec, candidate, target, &cand_grad);
                if (cand_loss <= loss) {
                    result.latent = std::move(candidate);
                    loss = cand_loss;
                    grad = std::move(cand_grad);
                    break;
                }
                step *= 0.5f;
            }
        }
        if (!std::isfinite(loss)) throw OptimizationError("non-finite latent objective", i);
        result.loss_history.push_back(loss);
    }
    return result;
}

Image quantize_8bit(const Image& image) {
    Image out = image;
    for (auto& v : out.values()) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
    return out;
}

}  // namespace resetedit
