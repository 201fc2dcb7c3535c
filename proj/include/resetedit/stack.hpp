#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "resetedit/config.hpp"
#include "resetedit/dataset.hpp"
#include "resetedit/pipeline.hpp"

namespace resetedit {

/// One sampled generation used as training data for the codec and injector.
struct GeneratedSample {
    std::uint64_t seed = 0;
    Condition cond;
    Latent z_T, z_0;
};

/// The four trained models plus the config they were built from. Stages are
/// trained in dependency order: vae, denoiser, codec, injector. Training the
/// denoiser finishes by aligning the VAE encoder to its samples, so it also
/// rewrites the vae checkpoint.
class Stack {
public:
    using Log = std::function<void(const std::string&)>;

    explicit Stack(Config config, Log log = {});

    const Config& config() const { return config_; }

    // Retraining a stage drops every stage trained on top of it.
    void train_vae();
    void train_denoiser();
    void train_codec();
    void train_injector();
    void train_all();

    // Saves every trained stage under dir/<stage>; returns stage -> checkpoint hash.
    std::map<std::string, std::string> save(const std::filesystem::path& dir) const;
    // Loads whichever stages exist under dir. All of them must carry the same
    // config snapshot, which becomes the stack's config.
    static Stack load(const std::filesystem::path& dir, Log log = {});

    bool has_vae() const { return vae_ != nullptr; }
    bool has_denoiser() const { return denoiser_ != nullptr; }
    bool has_codec() const { return codec_ != nullptr; }
    bool has_injector() const { return injector_ != nullptr; }

    const ToyVae& vae() const;
    const ToyDenoiser& denoiser() const;
    const ResidualCodec& codec() const;
    const Injector& injector() const;

    // Pipeline view; requires all four stages.
    Models models() const;

    const std::vector<LabeledImage>& dataset() const;
    std::span<const LabeledImage> train_images() const;
    std::span<const LabeledImage> held_out_images() const;
    // Deterministic generations (seed stream derived from the config seed).
    const std::vector<GeneratedSample>& generated(std::size_t count) const;

    // Scalar summaries of the last training run of each stage.
    const std::map<std::string, double>& metrics() const { return metrics_; }

private:
    void say(const std::string& s) const;
    void drop_generation_stages();
    void align_vae_encoder();

    Config config_;
    Log log_;
    std::unique_ptr<ToyVae> vae_;
    std::unique_ptr<ToyDenoiser> denoiser_;
    std::unique_ptr<ResidualCodec> codec_;
    std::unique_ptr<Injector> injector_;
    std::unique_ptr<CodecCoder> coder_;
    std::unique_ptr<InjectorCarrier> carrier_;
    mutable std::vector<LabeledImage> dataset_;
    mutable std::vector<GeneratedSample> generated_;
    std::map<std::string, double> metrics_;
};

// Seed of the i-th generation used for codec/injector training data.
std::uint64_t training_generation_seed(const Config& c, std::size_t i);

}  // namespace resetedit
