#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "resetedit/denoiser.hpp"
#include "resetedit/diffusion.hpp"
#include "resetedit/injector.hpp"
#include "resetedit/pixel_codec.hpp"
#include "resetedit/residual_codec.hpp"

namespace resetedit {

/// Every knob of the desk-scale stack. Serialized as nested JSON; unknown keys
/// are rejected when reading.
struct Config {
    std::uint64_t seed = 0;

    struct Geometry {
        std::int64_t image_size = 32;
        std::int64_t latent_channels = 4;
        std::int64_t latent_size = 16;
    } geometry;

    struct Schedule {
        std::int64_t train_steps = 1000;
        std::int64_t num_steps = 50;
        double beta_start = 0.00085;
        double beta_end = 0.012;
    } schedule;

    struct Guidance {
        float scale = 7.5f;
        // Edit-time scale; unset reuses `scale`.
        std::optional<float> edit_scale;
    } guidance;

    struct Dataset {
        std::int64_t images = 1200;
        std::int64_t classes = 8;
        std::int64_t held_out = 100;
    } dataset;

    struct Denoiser {
        std::int64_t hidden = 32;
        std::int64_t time_features = 32;
        float learning_rate = 1e-3f;
        std::int64_t steps = 3000;
        std::int64_t batch_size = 32;
        float condition_dropout = 0.1f;
    } denoiser;

    struct Vae {
        std::int64_t hidden = 32;
        float posterior_std = 0.05f;
        float kl_weight = 1e-4f;
        float learning_rate = 1e-3f;
        std::int64_t steps = 1500;
        std::int64_t batch_size = 16;
        // Encoder fine-tune on sampled latents once the denoiser is trained.
        std::int64_t align_steps = 3000;
        std::int64_t align_samples = 1000;
        float align_learning_rate = 1e-3f;
    } vae;

    struct Codec {
        std::int64_t codebook_size = 16;
        std::int64_t code_dim = 64;
        std::int64_t hidden = 32;
        std::int64_t downsample = 4;
        float beta = 1.0f;
        float learning_rate = 3e-4f;
        bool amsgrad = true;
        std::int64_t steps = 2000;
        std::int64_t batch_size = 32;
        float ema_decay = 0.99f;
        std::int64_t samples = 400;
    } codec;

    struct InjectorSection {
        std::int64_t message_bits = 64;
        std::int64_t hidden = 32;
        float lambda = 0.1f;
        float learning_rate = 1e-3f;
        std::int64_t steps = 3000;
        std::int64_t batch_size = 32;
        std::int64_t samples = 1000;
        NoiseLayer noise;
    } injector;

    struct LatentOpt {
        std::int64_t steps = 20;
        float step_size = 0.1f;
        bool backtracking = true;
        bool quantize_8bit = false;
    } latent_opt;

    // Throws ConfigError on any inconsistent value.
    void validate() const;

    float edit_guidance() const { return guidance.edit_scale.value_or(guidance.scale); }
    std::int64_t index_grid() const { return geometry.latent_size / codec.downsample; }

    NoiseSchedule make_schedule() const;
    DenoiserArch denoiser_arch() const;
    DenoiserTrainingConfig denoiser_training() const;
    VaeArch vae_arch() const;
    VaeTrainingConfig vae_training() const;
    EncoderAlignmentConfig encoder_alignment() const;
    CodecArch codec_arch() const;
    CodecTrainingConfig codec_training() const;
    InjectorArch injector_arch() const;
    InjectorTrainingConfig injector_training() const;
    LatentOptConfig latent_opt_config() const;

    // Canonical pretty JSON (stable key order), and its SHA-256.
    std::string to_json() const;
    std::string hash() const;

    static Config from_json(const std::string& text);
    static Config load(const std::filesystem::path& path);
};

}  // namespace resetedit
