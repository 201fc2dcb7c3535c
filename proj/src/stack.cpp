#include "resetedit/stack.hpp"

#include <chrono>
#include <sstream>

#include "resetedit/checkpoint.hpp"
#include "resetedit/errors.hpp"

namespace resetedit {

namespace fs = std::filesystem;

namespace {

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(5);
    os << v;
    return os.str();
}

std::vector<Latent> latents_of(std::span<const GeneratedSample> s, Latent GeneratedSample::*field) {
    std::vector<Latent> out;
    out.reserve(s.size());
    for (const auto& g : s) out.push_back(g.*field);
    return out;
}

std::vector<Latent> residuals_of(std::span<const GeneratedSample> s) {
    std::vector<Latent> out;
    out.reserve(s.size());
    for (const auto& g : s) out.push_back(g.z_T - g.z_0);
    return out;
}

}  // namespace

std::uint64_t training_generation_seed(const Config& c, std::size_t i) { return c.seed * 1000003ULL + 50000 + i; }

Stack::Stack(Config config, Log log) : config_(std::move(config)), log_(std::move(log)) { config_.validate(); }

void Stack::say(const std::string& s) const {
    if (log_) log_(s);
}

const std::vector<LabeledImage>& Stack::dataset() const {
    if (dataset_.empty())
        dataset_ = make_dataset(config_.dataset.images, config_.dataset.classes, config_.seed, config_.geometry.image_size);
    return dataset_;
}

std::span<const LabeledImage> Stack::train_images() const {
    const auto& d = dataset();
    return std::span(d).first(d.size() - static_cast<std::size_t>(config_.dataset.held_out));
}

std::span<const LabeledImage> Stack::held_out_images() const {
    const auto& d = dataset();
    return std::span(d).last(static_cast<std::size_t>(config_.dataset.held_out));
}

const ToyVae& Stack::vae() const {
    if (!vae_) throw ContractError("vae stage is not trained or loaded");
    return *vae_;
}
const ToyDenoiser& Stack::denoiser() const {
    if (!denoiser_) throw ContractError("denoiser stage is not trained or loaded");
    return *denoiser_;
}
const ResidualCodec& Stack::codec() const {
    if (!codec_) throw ContractError("codec stage is not trained or loaded");
    return *codec_;
}
const Injector& Stack::injector() const {
    if (!injector_) throw ContractError("injector stage is not trained or loaded");
    return *injector_;
}

Models Stack::models() const {
    Models m;
    m.denoiser = &denoiser();
    m.pixel = &vae();
    codec();
    injector();
    m.coder = coder_.get();
    m.carrier = carrier_.get();
    m.schedule = config_.make_schedule();
    return m;
}

const std::vector<GeneratedSample>& Stack::generated(std::size_t count) const {
    const auto& net = denoiser();
    const auto schedule = config_.make_schedule();
    const GuidanceConfig w(config_.guidance.scale);
    const auto shape = Shape{config_.geometry.latent_channels, config_.geometry.latent_size, config_.geometry.latent_size};
    while (generated_.size() < count) {
        const auto i = generated_.size();
        GeneratedSample g;
        g.seed = training_generation_seed(config_, i);
        g.cond = Condition(static_cast<std::int64_t>(i % static_cast<std::size_t>(config_.dataset.classes)));
        g.z_T = starting_latent(g.seed, shape);
        g.z_0 = snap_to_grid(sample_trajectory(g.z_T, net, g.cond, w, schedule).final);
        generated_.push_back(std::move(g));
    }
    return generated_;
}

void Stack::drop_generation_stages() {
    generated_.clear();
    coder_.reset();
    codec_.reset();
    carrier_.reset();
    injector_.reset();
}

void Stack::train_vae() {
    Timer timer;
    std::vector<Image> train, held;
    for (const auto& s : train_images()) train.push_back(s.image);
    for (const auto& s : held_out_images()) held.push_back(s.image);
    vae_ = std::make_unique<ToyVae>(config_.vae_arch(), config_.seed + 200);
    // Everything downstream was trained on the old latent space.
    denoiser_.reset();
    drop_generation_stages();
    say("vae: training " + std::to_string(config_.vae.steps) + " steps on " + std::to_string(train.size()) + " images");
    const auto rep = train_pixel_codec(*vae_, train, config_.vae_training());
    const double mse = reconstruction_mse(*vae_, held.empty() ? std::span<const Image>(train) : held);
    metrics_["vae.final_loss"] = rep.loss_history.empty() ? 0.0 : rep.loss_history.back();
    metrics_["vae.held_out_mse"] = mse;
    metrics_["vae.held_out_psnr"] = psnr_from_mse(mse);
    metrics_["vae.scale_factor"] = vae_->scale_factor();
    metrics_["vae.seconds"] = timer.seconds();
    say("vae: held-out reconstruction psnr " + fmt(psnr_from_mse(mse)) + " dB, scale " + fmt(vae_->scale_factor()) +
        ", " + fmt(timer.seconds()) + " s");
}

void Stack::train_denoiser() {
    Timer timer;
    const auto& codec = vae();
    std::vector<LabeledLatent> train, held;
    for (const auto& s : train_images()) train.push_back({codec.encode(s.image), s.cond});
    for (const auto& s : held_out_images()) held.push_back({codec.encode(s.image), s.cond});
    denoiser_ = std::make_unique<ToyDenoiser>(config_.denoiser_arch(), config_.seed + 100);
    drop_generation_stages();
    say("denoiser: training " + std::to_string(config_.denoiser.steps) + " steps on " + std::to_string(train.size()) +
        " latents");
    const auto rep = resetedit::train_denoiser(*denoiser_, train, config_.denoiser_training(), held);
    metrics_["denoiser.initial_eval_loss"] = rep.initial_eval_loss;
    metrics_["denoiser.final_eval_loss"] = rep.final_eval_loss;
    metrics_["denoiser.seconds"] = timer.seconds();
    say("denoiser: held-out loss " + fmt(rep.initial_eval_loss) + " -> " + fmt(rep.final_eval_loss) + ", " +
        fmt(timer.seconds()) + " s");
    align_vae_encoder();
}

void Stack::align_vae_encoder() {
    // Guided samples sit well outside the data latents, where the encoder
    // alone is a poor inverse of the decoder.
    Timer timer;
    const auto n = static_cast<std::size_t>(config_.vae.align_samples);
    say("vae: aligning the encoder on " + std::to_string(n) + " sampled latents");
    const auto& gen = generated(n);
    const auto latents = latents_of(std::span(gen).first(n), &GeneratedSample::z_0);
    std::vector<Image> anchors;
    for (const auto& s : train_images()) anchors.push_back(s.image);
    const auto rep = align_encoder(*vae_, latents, anchors, config_.encoder_alignment());
    // Fresh draws the alignment never saw.
    std::vector<Latent> fresh;
    const GuidanceConfig w(config_.guidance.scale);
    const auto schedule = config_.make_schedule();
    for (std::size_t i = 0; i < 32; ++i) {
        const auto z_T = starting_latent(config_.seed * 1000003ULL + 90000 + i, vae_->latent_shape());
        fresh.push_back(snap_to_grid(
            sample_trajectory(z_T, *denoiser_, Condition(static_cast<std::int64_t>(i) % config_.dataset.classes), w,
                              schedule)
                .final));
    }
    double held = 0.0;
    for (const auto& z : fresh) held += mean_squared_error(vae_->encode(vae_->decode(z)), z);
    held /= static_cast<double>(fresh.size());
    std::vector<Image> held_images;
    for (const auto& s : held_out_images()) held_images.push_back(s.image);
    const double mse = reconstruction_mse(*vae_, held_images.empty() ? std::span<const Image>(anchors) : held_images);
    metrics_["vae.align_initial_cycle_mse"] = rep.initial_cycle_mse;
    metrics_["vae.align_final_cycle_mse"] = rep.final_cycle_mse;
    metrics_["vae.align_held_out_cycle_mse"] = held;
    metrics_["vae.held_out_psnr"] = psnr_from_mse(mse);
    metrics_["vae.align_seconds"] = timer.seconds();
    say("vae: encode(decode(z)) mse " + fmt(rep.initial_cycle_mse) + " -> " + fmt(rep.final_cycle_mse) +
        " (unseen samples " + fmt(held) + "), held-out psnr " + fmt(psnr_from_mse(mse)) + " dB, " +
        fmt(timer.seconds()) + " s");
}

void Stack::train_codec() {
    Timer timer;
    const auto n = static_cast<std::size_t>(config_.codec.samples);
    const auto held_n = std::max<std::size_t>(1, n / 10);
    say("codec: sampling " + std::to_string(n + held_n) + " generations");
    const auto& gen = generated(n + held_n);
    const auto all = residuals_of(gen);
    std::span<const Latent> train(all.data(), n), held(all.data() + n, held_n);
    codec_ = std::make_unique<ResidualCodec>(config_.codec_arch(), config_.seed + 300, config_.codec.beta);
    coder_ = std::make_unique<CodecCoder>(*codec_);
    say("codec: training " + std::to_string(config_.codec.steps) + " steps");
    const auto rep = resetedit::train_codec(*codec_, train, config_.codec_training(), held);
    metrics_["codec.initial_recon_mse"] = rep.initial_recon_mse;
    metrics_["codec.final_recon_mse"] = rep.final_recon_mse;
    metrics_["codec.seconds"] = timer.seconds();
    say("codec: held-out recon mse " + fmt(rep.initial_recon_mse) + " -> " + fmt(rep.final_recon_mse) + ", " +
        fmt(timer.seconds()) + " s");
}

void Stack::train_injector() {
    Timer timer;
    const auto n = static_cast<std::size_t>(config_.injector.samples);
    const auto held_n = std::max<std::size_t>(1, n / 10);
    say("injector: sampling " + std::to_string(n + held_n) + " generations");
    const auto& gen = generated(n + held_n);
    const auto all = latents_of(gen, &GeneratedSample::z_0);
    std::span<const Latent> train(all.data(), n), held(all.data() + n, held_n);
    injector_ = std::make_unique<Injector>(config_.injector_arch(), config_.seed + 400, config_.injector.lambda);
    carrier_ = std::make_unique<InjectorCarrier>(*injector_);
    say("injector: training " + std::to_string(config_.injector.steps) + " steps on " + std::to_string(n) + " latents");
    auto cfg = config_.injector_training();
    const auto& pixel = vae();
    cfg.channel = [&pixel](const ag::Var& z) { return pixel.encode_batch(pixel.decode_batch(z)); };
    resetedit::train_injector(*injector_, train, cfg);
    const auto clean = evaluate_injector(*injector_, held, nullptr, config_.seed + 401);
    const auto noisy = evaluate_injector(*injector_, held, &config_.injector.noise, config_.seed + 402);
    // Through the same decode -> encode -> latent optimization path recovery uses.
    std::mt19937_64 rng(config_.seed + 403);
    double roundtrip = 0.0;
    for (const auto& z : held) {
        const auto m = BitMessage::random(static_cast<std::size_t>(config_.injector.message_bits), rng);
        const auto image = pixel.decode(injector_->inject(z, m));
        const auto opt = optimize_latent(pixel.encode(image), image, pixel, config_.latent_opt_config());
        roundtrip += bit_accuracy(injector_->extract(opt.latent), m);
    }
    roundtrip /= static_cast<double>(held.size());
    metrics_["injector.roundtrip_bit_accuracy"] = roundtrip;
    metrics_["injector.clean_bit_accuracy"] = clean.bit_accuracy;
    metrics_["injector.noisy_bit_accuracy"] = noisy.bit_accuracy;
    metrics_["injector.perturbation_mse"] = clean.perturbation_mse;
    metrics_["injector.seconds"] = timer.seconds();
    say("injector: bit accuracy clean " + fmt(clean.bit_accuracy) + ", noisy " + fmt(noisy.bit_accuracy) +
        ", round trip " + fmt(roundtrip) +
        ", perturbation mse " + fmt(clean.perturbation_mse) + ", " + fmt(timer.seconds()) + " s");
}

void Stack::train_all() {
    train_vae();
    train_denoiser();
    train_codec();
    train_injector();
}

std::map<std::string, std::string> Stack::save(const fs::path& dir) const {
    std::map<std::string, std::string> hashes;
    if (vae_) hashes["vae"] = save_model(dir / "vae", *vae_, config_);
    if (denoiser_) hashes["denoiser"] = save_model(dir / "denoiser", *denoiser_, config_);
    if (codec_) hashes["codec"] = save_model(dir / "codec", *codec_, config_);
    if (injector_) hashes["injector"] = save_model(dir / "injector", *injector_, config_);
    return hashes;
}

Stack Stack::load(const fs::path& dir, Log log) {
    std::optional<Config> config;
    CheckpointInfo info;
    std::unique_ptr<ToyVae> vae;
    std::unique_ptr<ToyDenoiser> den;
    std::unique_ptr<ResidualCodec> codec;
    std::unique_ptr<Injector> inj;
    auto adopt = [&](const char* stage) {
        if (!config) {
            config = info.config;
        } else if (config->hash() != info.config.hash()) {
            throw FormatError(std::string("checkpoint ") + stage + " was built from a different config");
        }
    };
    if (fs::exists(dir / "vae")) { vae = load_vae(dir / "vae", &info); adopt("vae"); }
    if (fs::exists(dir / "denoiser")) { den = load_denoiser(dir / "denoiser", &info); adopt("denoiser"); }
    if (fs::exists(dir / "codec")) { codec = load_codec(dir / "codec", &info); adopt("codec"); }
    if (fs::exists(dir / "injector")) { inj = load_injector(dir / "injector", &info); adopt("injector"); }
    if (!config) throw FormatError("no checkpoints found in " + dir.string());

    Stack s(*config, std::move(log));
    s.vae_ = std::move(vae);
    s.denoiser_ = std::move(den);
    s.codec_ = std::move(codec);
    s.injector_ = std::move(inj);
    if (s.codec_) s.coder_ = std::make_unique<CodecCoder>(*s.codec_);
    if (s.injector_) s.carrier_ = std::make_unique<InjectorCarrier>(*s.injector_);
    return s;
}

}  // namespace resetedit
