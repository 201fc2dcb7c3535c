#pragma once

#include <random>
#include <span>
#include <vector>

#include "resetedit/nn.hpp"
#include "resetedit/types.hpp"

namespace resetedit {

/// Image <-> latent autoencoder. encode is deterministic (posterior mean);
/// decode_batch is differentiable so latents can be refined against pixels.
class PixelCodec {
public:
    virtual ~PixelCodec() = default;
    virtual Shape latent_shape() const = 0;
    virtual Shape image_shape() const = 0;
    virtual Latent encode(const Image& image) const = 0;
    // z: [N,C,H,W] latents -> [N,3,Hi,Wi] images.
    virtual ag::Var decode_batch(const ag::Var& z) const = 0;

    Image decode(const Latent& z) const;
};

/// Test double whose latent and image are the same array: decode(z) == z.
class IdentityPixelCodec final : public PixelCodec {
public:
    explicit IdentityPixelCodec(Shape image_shape);
    Shape latent_shape() const override { return shape_; }
    Shape image_shape() const override { return shape_; }
    Latent encode(const Image& image) const override;
    ag::Var decode_batch(const ag::Var& z) const override { return z; }

private:
    Shape shape_;
};

struct VaeArch {
    std::int64_t image_size = 32;
    std::int64_t latent_channels = 4;
    std::int64_t hidden = 32;
    // Fixed posterior standard deviation used during training (pre-scale units).
    float posterior_std = 0.05f;
};

/// Small VAE operating at latent resolution: pixel-unshuffle by 2, a conv
/// stack to the latent mean; the decoder mirrors it and ends in a sigmoid so
/// images stay in [0,1]. Latents are multiplied by a stored scale factor so
/// the diffusion model sees roughly unit variance.
class ToyVae final : public PixelCodec {
public:
    ToyVae(const VaeArch& arch, std::uint64_t seed);
    ToyVae(const VaeArch& arch, nn::ParamStore params);

    Shape latent_shape() const override;
    Shape image_shape() const override;
    Latent encode(const Image& image) const override;
    ag::Var decode_batch(const ag::Var& z) const override;

    // Posterior mean in scaled latent units; x: [N,3,H,W].
    ag::Var encode_batch(const ag::Var& x) const;
    // Unscaled encoder/decoder used by training.
    ag::Var encoder_mean(const ag::Var& x) const;
    ag::Var decode_unscaled(const ag::Var& z) const;

    float scale_factor() const { return params_.get("latent.scale").value()[0]; }
    void set_scale_factor(float s);

    const VaeArch& arch() const { return arch_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    void bind();

    VaeArch arch_;
    nn::ParamStore params_;
    nn::Conv2d enc_in_, enc_mid_, enc_mid2_, enc_out_;
    nn::Conv2d dec_in_, dec_mid_, dec_mid2_, dec_out_;
};

struct VaeTrainingConfig {
    float learning_rate = 1e-3f;
    std::int64_t steps = 1500;
    std::int64_t batch_size = 16;
    float kl_weight = 1e-4f;
    std::uint64_t seed = 0;
};

struct VaeLoss {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

// Reconstruction + kl_weight * KL for a batch with the given posterior noise
// (same shape as the latent batch). Returns the differentiable total.
ag::Var vae_loss(const ToyVae& vae, const Tensor& images, const Tensor& noise, float kl_weight, VaeLoss* parts = nullptr);

struct VaeTrainingReport {
    std::vector<double> loss_history;
    double initial_recon_mse = 0.0;
    double final_recon_mse = 0.0;
};

// Trains in place, then sets the scale factor to 1 / std of the training latents.
VaeTrainingReport train_pixel_codec(ToyVae& vae, std::span<const Image> images, const VaeTrainingConfig& cfg);

double reconstruction_mse(const PixelCodec& codec, std::span<const Image> images);

struct EncoderAlignmentConfig {
    float learning_rate = 1e-3f;
    std::int64_t steps = 3000;
    std::int64_t batch_size = 16;  // half sampled latents, half anchor images
    std::uint64_t seed = 0;
};

struct EncoderAlignmentReport {
    std::vector<double> loss_history;
    double initial_cycle_mse = 0.0;  // mean (encode(decode(z)) - z)^2 over `latents`
    double final_cycle_mse = 0.0;
};

// Fine-tunes the encoder only, decoder frozen, so that encode(decode(z)) ~ z
// on `latents` while encode(x) of the anchor images stays where it was.
EncoderAlignmentReport align_encoder(ToyVae& vae, std::span<const Latent> latents, std::span<const Image> anchors,
                                     const EncoderAlignmentConfig& cfg);

struct LatentOptConfig {
    std::int64_t steps = 20;
    float step_size = 0.1f;
    bool backtracking = true;
    // Halvings tried per step before the step is rejected.
    int max_halvings = 12;

    void validate() const;
};

struct LatentOptResult {
    Latent latent;
    std::vector<double> loss_history;  // steps + 1 entries, starting with the initial loss
};

// L_opt(z) = || decode(z) - target ||^2 (sum over pixels).
double latent_objective(const PixelCodec& codec, const Latent& z, const Image& target, Latent* gradient = nullptr);

// Gradient descent on L_opt over the latent only; the codec stays frozen.
LatentOptResult optimize_latent(const Latent& z_init, const Image& target, const PixelCodec& codec,
                                const LatentOptConfig& cfg);

// Rounds to 8-bit levels and back.
Image quantize_8bit(const Image& image);

}  // namespace resetedit
