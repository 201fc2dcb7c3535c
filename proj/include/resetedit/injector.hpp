#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "resetedit/nn.hpp"
#include "resetedit/residual_codec.hpp"
#include "resetedit/types.hpp"

namespace resetedit {

/// Fixed-length bit sequence.
class BitMessage {
public:
    BitMessage() = default;
    explicit BitMessage(std::vector<std::uint8_t> bits);
    static BitMessage random(std::size_t length, std::mt19937_64& rng);
    // Canonical text form: one '0'/'1' character per bit.
    static BitMessage from_string(const std::string& text);

    std::size_t size() const { return bits_.size(); }
    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::string to_string() const;

    friend bool operator==(const BitMessage&, const BitMessage&) = default;

private:
    std::vector<std::uint8_t> bits_;
};

double bit_accuracy(const BitMessage& a, const BitMessage& b);

// Row-major over (i, j); each index as log2(K) bits, most significant first.
BitMessage serialize_indices(const IndexMap& m, std::int64_t codebook_size);
IndexMap deserialize_indices(const BitMessage& bits, std::int64_t codebook_size, std::int64_t rows, std::int64_t cols);

struct NoiseLayer {
    float gaussian_sigma = 0.05f;
    std::int64_t filter_kernel = 7;
    // Gaussian filter standard deviation; <= 0 derives it from the kernel size
    // as 0.3 * ((k - 1) / 2 - 1) + 0.8.
    float filter_sigma = 0.0f;

    void validate() const;
    std::vector<float> filter_taps() const;
};

// Additive Gaussian noise followed by a normalized channelwise Gaussian blur.
Latent apply_noise(const Latent& z, const NoiseLayer& layer, std::uint64_t seed);
// Batched differentiable form; noise is drawn from rng.
ag::Var apply_noise(const ag::Var& z, const NoiseLayer& layer, std::mt19937_64& rng);

struct InjectorArch {
    std::int64_t latent_channels = 4;
    std::int64_t latent_size = 16;
    std::int64_t message_bits = 64;
    std::int64_t hidden = 32;
};

/// Message-in-latent embedder and extractor. The message is projected to a
/// low-resolution plane, upsampled and fused with latent features; the
/// embedder outputs an additive perturbation. The extractor is a strided conv
/// stack with a linear head giving one score in (0,1) per bit.
class Injector {
public:
    Injector(const InjectorArch& arch, std::uint64_t seed, float lambda = 0.1f);
    Injector(const InjectorArch& arch, nn::ParamStore params, float lambda = 0.1f);

    Latent inject(const Latent& z, const BitMessage& m) const;
    BitMessage extract(const Latent& z) const;
    // Per-bit scores before thresholding.
    std::vector<float> scores(const Latent& z) const;

    // Batched differentiable forms: z [N,C,H,W], bits [N,L] in {0,1}.
    ag::Var embed(const ag::Var& z, const Tensor& bits) const;
    ag::Var score(const ag::Var& z) const;

    const InjectorArch& arch() const { return arch_; }
    float lambda() const { return lambda_; }
    void set_lambda(float l) { lambda_ = l; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    void bind();
    void check(const Latent& z) const;

    InjectorArch arch_;
    float lambda_ = 0.1f;
    nn::ParamStore params_;
    nn::Linear msg_in_;
    nn::Conv2d msg_conv_, img_conv_, fuse_conv_, fuse2_conv_, out_conv_;
    nn::Conv2d ext_in_, ext_down1_, ext_down2_;
    nn::Linear ext_head_;
};

struct InjectorLoss {
    ag::Var total;
    double index_loss = 0.0;
    double injec_loss = 0.0;
};

// L = L_index + lambda * L_injec with L_index = mean (m_e - m)^2 on soft scores
// of the noised injected latent, L_injec = mean (z_m - z)^2.
InjectorLoss injector_loss(const Injector& inj, const Tensor& latents, const Tensor& bits, const NoiseLayer& noise,
                           std::mt19937_64& rng);

// Differentiable distortion between embedding and extraction, batched [N,C,H,W].
using LatentChannel = std::function<ag::Var(const ag::Var&)>;

// Same loss with an arbitrary channel in place of the noise layer.
InjectorLoss injector_loss(const Injector& inj, const Tensor& latents, const Tensor& bits, const LatentChannel& channel);

struct InjectorTrainingConfig {
    float learning_rate = 1e-3f;
    std::int64_t steps = 3000;
    std::int64_t batch_size = 32;
    std::uint64_t seed = 0;
    NoiseLayer noise;
    // Optional extra channel, typically a frozen pixel-codec decode/encode
    // round trip. Steps cycle through noise layer, this channel and the clean
    // latent; without it they cycle through noise layer and clean.
    LatentChannel channel;
};

struct InjectorTrainingReport {
    std::vector<double> loss_history;
};

InjectorTrainingReport train_injector(Injector& inj, std::span<const Latent> latents, const InjectorTrainingConfig& cfg);

struct InjectorEval {
    double bit_accuracy = 0.0;
    double perturbation_mse = 0.0;  // mean (z_m - z)^2 per element
};

// Held-out accuracy with fresh random messages, optionally through the noise layer.
InjectorEval evaluate_injector(const Injector& inj, std::span<const Latent> latents, const NoiseLayer* noise,
                               std::uint64_t seed);

}  // namespace resetedit
