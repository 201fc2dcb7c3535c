#include "resetedit/config.hpp"

#include <bit>
#include <charconv>
#include <cstdlib>
#include <set>

#include <json.hpp>

#include "resetedit/errors.hpp"
#include "resetedit/tensor_io.hpp"

namespace resetedit {

using nlohmann::json;

namespace {

// Reads an object while tracking which keys were consumed, so leftovers can be
// reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError("expected boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError("expected integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0)
                        throw ConfigError("expected non-negative integer");
                }
            } else {
                if (!it->is_number()) throw ConfigError("expected number");
            }
            out = it->template get<T>();
        } catch (const ConfigError& e) {
            throw ConfigError(where() + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return;
        if (!it->is_number()) throw ConfigError(where() + "." + key + ": expected number or null");
        out = it->template get<T>();
    }

    Reader child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        static const json empty = json::object();
        return Reader(it == j_.end() ? empty : *it, path_ + "." + key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key " + path_ + "." + it.key());
    }

private:
    std::string where() const { return path_; }
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

void Config::validate() const {
    require(geometry.image_size > 0 && geometry.latent_channels > 0 && geometry.latent_size > 0, "geometry must be positive");
    require(geometry.image_size == 2 * geometry.latent_size, "image_size must be twice latent_size");
    require(schedule.train_steps >= 1, "schedule.train_steps must be >= 1");
    require(schedule.num_steps >= 0 && schedule.num_steps <= schedule.train_steps,
            "schedule.num_steps must lie in [0, train_steps]");
    require(schedule.beta_start > 0 && schedule.beta_end < 1 && schedule.beta_start <= schedule.beta_end,
            "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
    require(guidance.scale >= 0, "guidance.scale must be >= 0");
    require(!guidance.edit_scale || *guidance.edit_scale >= 0, "guidance.edit_scale must be >= 0");
    require(dataset.images >= 1, "dataset.images must be >= 1");
    require(dataset.classes >= 2, "dataset.classes must be >= 2");
    require(dataset.held_out >= 0 && dataset.held_out < dataset.images, "dataset.held_out must be in [0, images)");
    require(denoiser.condition_dropout >= 0 && denoiser.condition_dropout <= 1, "denoiser.condition_dropout must be in [0,1]");
    require(denoiser.learning_rate > 0 && vae.learning_rate > 0 && codec.learning_rate > 0 && injector.learning_rate > 0,
            "learning rates must be positive");
    require(denoiser.steps >= 0 && vae.steps >= 0 && codec.steps >= 0 && injector.steps >= 0, "step counts must be >= 0");
    require(denoiser.batch_size >= 1 && vae.batch_size >= 1 && codec.batch_size >= 1 && injector.batch_size >= 1,
            "batch sizes must be >= 1");
    require(vae.posterior_std >= 0 && vae.kl_weight >= 0, "vae.posterior_std and vae.kl_weight must be >= 0");
    require(vae.align_steps >= 0 && vae.align_samples >= 1 && vae.align_learning_rate > 0,
            "vae.align_steps must be >= 0, align_samples >= 1 and align_learning_rate > 0");
    require(codec.codebook_size >= 2, "codec.codebook_size must be >= 2");
    require(std::has_single_bit(static_cast<std::uint64_t>(codec.codebook_size)),
            "codec.codebook_size must be a power of two");
    require(codec.downsample >= 2 && std::has_single_bit(static_cast<std::uint64_t>(codec.downsample)) &&
                geometry.latent_size % codec.downsample == 0,
            "codec.downsample must be a power of two dividing latent_size");
    require(codec.beta >= 0, "codec.beta must be >= 0");
    require(codec.ema_decay > 0 && codec.ema_decay < 1, "codec.ema_decay must be in (0,1)");
    require(codec.samples >= 1 && injector.samples >= 1, "sample counts must be >= 1");
    const auto bits = index_grid() * index_grid() * std::countr_zero(static_cast<std::uint64_t>(codec.codebook_size));
    require(injector.message_bits == bits, "injector.message_bits must equal grid^2 * log2(codebook_size) = " +
                                               std::to_string(bits));
    require(injector.lambda >= 0, "injector.lambda must be >= 0");
    injector.noise.validate();
    latent_opt_config().validate();
}

NoiseSchedule Config::make_schedule() const {
    return NoiseSchedule::linear(schedule.num_steps, schedule.train_steps, schedule.beta_start, schedule.beta_end);
}

DenoiserArch Config::denoiser_arch() const {
    return {geometry.latent_channels, geometry.latent_size, denoiser.hidden, denoiser.time_features, dataset.classes};
}

DenoiserTrainingConfig Config::denoiser_training() const {
    DenoiserTrainingConfig c;
    c.learning_rate = denoiser.learning_rate;
    c.steps = denoiser.steps;
    c.batch_size = denoiser.batch_size;
    c.condition_dropout = denoiser.condition_dropout;
    c.seed = seed + 101;
    c.train_steps = schedule.train_steps;
    c.beta_start = schedule.beta_start;
    c.beta_end = schedule.beta_end;
    return c;
}

VaeArch Config::vae_arch() const {
    return {geometry.image_size, geometry.latent_channels, vae.hidden, vae.posterior_std};
}

VaeTrainingConfig Config::vae_training() const {
    return {vae.learning_rate, vae.steps, vae.batch_size, vae.kl_weight, seed + 201};
}

EncoderAlignmentConfig Config::encoder_alignment() const {
    EncoderAlignmentConfig c;
    c.learning_rate = vae.align_learning_rate;
    c.steps = vae.align_steps;
    c.seed = seed + 202;
    return c;
}

CodecArch Config::codec_arch() const {
    return {geometry.latent_channels, geometry.latent_size, codec.hidden, codec.code_dim, codec.codebook_size,
            codec.downsample};
}

CodecTrainingConfig Config::codec_training() const {
    return {codec.learning_rate, codec.amsgrad, codec.steps, codec.batch_size, codec.ema_decay, seed + 301};
}

InjectorArch Config::injector_arch() const {
    return {geometry.latent_channels, geometry.latent_size, injector.message_bits, injector.hidden};
}

InjectorTrainingConfig Config::injector_training() const {
    InjectorTrainingConfig c;
    c.learning_rate = injector.learning_rate;
    c.steps = injector.steps;
    c.batch_size = injector.batch_size;
    c.seed = seed + 401;
    c.noise = injector.noise;
    return c;
}

LatentOptConfig Config::latent_opt_config() const {
    LatentOptConfig c;
    c.steps = latent_opt.steps;
    c.step_size = latent_opt.step_size;
    c.backtracking = latent_opt.backtracking;
    return c;
}

namespace {

// Shortest decimal that reads back as the same float, so 0.99f prints as 0.99.
json short_float(float v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

}  // namespace

std::string Config::to_json() const {
    json j;
    j["seed"] = seed;
    j["geometry"] = {{"image_size", geometry.image_size},
                     {"latent_channels", geometry.latent_channels},
                     {"latent_size", geometry.latent_size}};
    j["schedule"] = {{"train_steps", schedule.train_steps},
                     {"num_steps", schedule.num_steps},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end}};
    j["guidance"] = {{"scale", short_float(guidance.scale)},
                     {"edit_scale", guidance.edit_scale ? short_float(*guidance.edit_scale) : json(nullptr)}};
    j["dataset"] = {{"images", dataset.images}, {"classes", dataset.classes}, {"held_out", dataset.held_out}};
    j["denoiser"] = {{"hidden", denoiser.hidden},
                     {"time_features", denoiser.time_features},
                     {"learning_rate", short_float(denoiser.learning_rate)},
                     {"steps", denoiser.steps},
                     {"batch_size", denoiser.batch_size},
                     {"condition_dropout", short_float(denoiser.condition_dropout)}};
    j["vae"] = {{"hidden", vae.hidden},
                {"posterior_std", short_float(vae.posterior_std)},
                {"kl_weight", short_float(vae.kl_weight)},
                {"learning_rate", short_float(vae.learning_rate)},
                {"steps", vae.steps},
                {"batch_size", vae.batch_size},
                {"align_steps", vae.align_steps},
                {"align_samples", vae.align_samples},
                {"align_learning_rate", short_float(vae.align_learning_rate)}};
    j["codec"] = {{"codebook_size", codec.codebook_size},
                  {"code_dim", codec.code_dim},
                  {"hidden", codec.hidden},
                  {"downsample", codec.downsample},
                  {"beta", short_float(codec.beta)},
                  {"learning_rate", short_float(codec.learning_rate)},
                  {"amsgrad", codec.amsgrad},
                  {"steps", codec.steps},
                  {"batch_size", codec.batch_size},
                  {"ema_decay", short_float(codec.ema_decay)},
                  {"samples", codec.samples}};
    j["injector"] = {{"message_bits", injector.message_bits},
                     {"hidden", injector.hidden},
                     {"lambda", short_float(injector.lambda)},
                     {"learning_rate", short_float(injector.learning_rate)},
                     {"steps", injector.steps},
                     {"batch_size", injector.batch_size},
                     {"samples", injector.samples},
                     {"noise",
                      {{"gaussian_sigma", short_float(injector.noise.gaussian_sigma)},
                       {"filter_kernel", injector.noise.filter_kernel},
                       {"filter_sigma", short_float(injector.noise.filter_sigma)}}}};
    j["latent_opt"] = {{"steps", latent_opt.steps},
                       {"step_size", short_float(latent_opt.step_size)},
                       {"backtracking", latent_opt.backtracking},
                       {"quantize_8bit", latent_opt.quantize_8bit}};
    return j.dump(2) + "\n";
}

std::string Config::hash() const { return io::sha256_hex(to_json()); }

Config Config::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Config c;
    Reader root(j, "config");
    root.get("seed", c.seed);
    {
        auto r = root.child("geometry");
        r.get("image_size", c.geometry.image_size);
        r.get("latent_channels", c.geometry.latent_channels);
        r.get("latent_size", c.geometry.latent_size);
        r.finish();
    }
    {
        auto r = root.child("schedule");
        r.get("train_steps", c.schedule.train_steps);
        r.get("num_steps", c.schedule.num_steps);
        r.get("beta_start", c.schedule.beta_start);
        r.get("beta_end", c.schedule.beta_end);
        r.finish();
    }
    {
        auto r = root.child("guidance");
        r.get("scale", c.guidance.scale);
        r.get_optional("edit_scale", c.guidance.edit_scale);
        r.finish();
    }
    {
        auto r = root.child("dataset");
        r.get("images", c.dataset.images);
        r.get("classes", c.dataset.classes);
        r.get("held_out", c.dataset.held_out);
        r.finish();
    }
    {
        auto r = root.child("denoiser");
        r.get("hidden", c.denoiser.hidden);
        r.get("time_features", c.denoiser.time_features);
        r.get("learning_rate", c.denoiser.learning_rate);
        r.get("steps", c.denoiser.steps);
        r.get("batch_size", c.denoiser.batch_size);
        r.get("condition_dropout", c.denoiser.condition_dropout);
        r.finish();
    }
    {
        auto r = root.child("vae");
        r.get("hidden", c.vae.hidden);
        r.get("posterior_std", c.vae.posterior_std);
        r.get("kl_weight", c.vae.kl_weight);
        r.get("learning_rate", c.vae.learning_rate);
        r.get("steps", c.vae.steps);
        r.get("batch_size", c.vae.batch_size);
        r.get("align_steps", c.vae.align_steps);
        r.get("align_samples", c.vae.align_samples);
        r.get("align_learning_rate", c.vae.align_learning_rate);
        r.finish();
    }
    {
        auto r = root.child("codec");
        r.get("codebook_size", c.codec.codebook_size);
        r.get("code_dim", c.codec.code_dim);
        r.get("hidden", c.codec.hidden);
        r.get("downsample", c.codec.downsample);
        r.get("beta", c.codec.beta);
        r.get("learning_rate", c.codec.learning_rate);
        r.get("amsgrad", c.codec.amsgrad);
        r.get("steps", c.codec.steps);
        r.get("batch_size", c.codec.batch_size);
        r.get("ema_decay", c.codec.ema_decay);
        r.get("samples", c.codec.samples);
        r.finish();
    }
    {
        auto r = root.child("injector");
        r.get("message_bits", c.injector.message_bits);
        r.get("hidden", c.injector.hidden);
        r.get("lambda", c.injector.lambda);
        r.get("learning_rate", c.injector.learning_rate);
        r.get("steps", c.injector.steps);
        r.get("batch_size", c.injector.batch_size);
        r.get("samples", c.injector.samples);
        auto n = r.child("noise");
        n.get("gaussian_sigma", c.injector.noise.gaussian_sigma);
        n.get("filter_kernel", c.injector.noise.filter_kernel);
        n.get("filter_sigma", c.injector.noise.filter_sigma);
        n.finish();
        r.finish();
    }
    {
        auto r = root.child("latent_opt");
        r.get("steps", c.latent_opt.steps);
        r.get("step_size", c.latent_opt.step_size);
        r.get("backtracking", c.latent_opt.backtracking);
        r.get("quantize_8bit", c.latent_opt.quantize_8bit);
        r.finish();
    }
    root.finish();
    c.validate();
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return from_json(io::read_text(path));
}

}  // namespace resetedit
