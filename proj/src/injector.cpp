#include "resetedit/injector.hpp"

#include <bit>
#include <cmath>

namespace resetedit {

BitMessage::BitMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto b : bits_)
        if (b > 1) throw ContractError("bit values must be 0 or 1");
}

BitMessage BitMessage::random(std::size_t length, std::mt19937_64& rng) {
    std::vector<std::uint8_t> bits(length);
    std::bernoulli_distribution coin(0.5);
    for (auto& b : bits) b = coin(rng) ? 1 : 0;
    return BitMessage(std::move(bits));
}

BitMessage BitMessage::from_string(const std::string& text) {
    std::vector<std::uint8_t> bits;
    for (char c : text) {
        if (c == '0' || c == '1')
            bits.push_back(static_cast<std::uint8_t>(c - '0'));
        else if (c != ' ')
            throw FormatError("bit string may only contain '0', '1' and spaces");
    }
    return BitMessage(std::move(bits));
}

std::string BitMessage::to_string() const {
    std::string s;
    for (auto b : bits_) s.push_back(static_cast<char>('0' + b));
    return s;
}

double bit_accuracy(const BitMessage& a, const BitMessage& b) {
    if (a.size() != b.size()) throw ContractError("bit_accuracy: length mismatch");
    if (a.size() == 0) return 1.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

namespace {

int bits_per_index(std::int64_t codebook_size) {
    if (codebook_size < 1 || !std::has_single_bit(static_cast<std::uint64_t>(codebook_size)))
        throw ConfigError("codebook size " + std::to_string(codebook_size) + " is not a power of two");
    return std::countr_zero(static_cast<std::uint64_t>(codebook_size));
}

}  // namespace

BitMessage serialize_indices(const IndexMap& m, std::int64_t codebook_size) {
    const int width = bits_per_index(codebook_size);
    std::vector<std::uint8_t> bits;
    bits.reserve(m.indices().size() * static_cast<std::size_t>(width));
    for (auto idx : m.indices()) {
        if (idx < 0 || idx >= codebook_size) throw ContractError("index " + std::to_string(idx) + " outside codebook");
        for (int b = width - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((idx >> b) & 1));
    }
    return BitMessage(std::move(bits));
}

IndexMap deserialize_indices(const BitMessage& bits, std::int64_t codebook_size, std::int64_t rows, std::int64_t cols) {
    const int width = bits_per_index(codebook_size);
    if (static_cast<std::int64_t>(bits.size()) != rows * cols * width)
        throw ContractError("message length " + std::to_string(bits.size()) + " != " +
                            std::to_string(rows * cols * width) + " bits");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rows * cols), 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int b = 0; b < width; ++b) idx[i] = (idx[i] << 1) | bits[i * static_cast<std::size_t>(width) + static_cast<std::size_t>(b)];
    return IndexMap(rows, cols, std::move(idx));
}

void NoiseLayer::validate() const {
    if (!(gaussian_sigma >= 0.0f)) throw ConfigError("noise sigma must be >= 0");
    if (filter_kernel < 1 || filter_kernel % 2 == 0) throw ConfigError("filter kernel must be odd and >= 1");
}

std::vector<float> NoiseLayer::filter_taps() const {
    validate();
    const auto r = filter_kernel / 2;
    const double sigma = filter_sigma > 0.0f ? filter_sigma : 0.3 * (static_cast<double>(r) - 1.0) + 0.8;
    std::vector<double> w;
    double total = 0.0;
    for (std::int64_t i = -r; i <= r; ++i) {
        w.push_back(std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma)));
        total += w.back();
    }
    std::vector<float> taps;
    for (double v : w) taps.push_back(static_cast<float>(v / total));
    return taps;
}

ag::Var apply_noise(const ag::Var& z, const NoiseLayer& layer, std::mt19937_64& rng) {
    layer.validate();
    ag::Var out = z;
    if (layer.gaussian_sigma > 0.0f) out = ag::add(out, ag::constant(Tensor::randn(z.shape(), rng, layer.gaussian_sigma)));
    if (layer.filter_kernel > 1) out = ag::separable_filter(out, layer.filter_taps());
    return out;
}

Latent apply_noise(const Latent& z, const NoiseLayer& layer, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ag::NoGradGuard no_grad;
    const auto out = apply_noise(ag::constant(z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)})), layer, rng);
    return Latent(out.value().reshaped(z.shape()));
}

Injector::Injector(const InjectorArch& arch, std::uint64_t seed, float lambda) : arch_(arch), lambda_(lambda) {
    if (arch.latent_size % 4 != 0) throw ConfigError("injector latent size must be divisible by 4");
    std::mt19937_64 rng(seed);
    const auto h = arch.hidden, c = arch.latent_channels, half = arch.latent_size / 2;
    nn::Linear::create(params_, "msg.in", arch.message_bits, c * half * half, rng);
    nn::Conv2d::create(params_, "msg.conv", c, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "img.conv", c, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "fuse.conv", 2 * h, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "out.conv", h + c, c, 1, 1, 0, rng, 0.1f);
    nn::Conv2d::create(params_, "ext.in", c, h, 3, 1, 1, rng);
    nn::Conv2d::create(params_, "ext.down1", h, h, 4, 2, 1, rng);
    nn::Conv2d::create(params_, "ext.down2", h, h, 4, 2, 1, rng);
    nn::Linear::create(params_, "ext.head", h * (arch.latent_size / 4) * (arch.latent_size / 4), arch.message_bits,
                       rng);
    bind();
}

Injector::Injector(const InjectorArch& arch, nn::ParamStore params, float lambda)
    : arch_(arch), lambda_(lambda), params_(std::move(params)) {
    bind();
}

void Injector::bind() {
    auto conv = [&](const std::string& name, std::int64_t stride, std::int64_t pad) {
        nn::Conv2d c;
        c.weight = params_.get(name + ".weight");
        c.bias = params_.get(name + ".bias");
        c.stride = stride;
        c.pad = pad;
        return c;
    };
    auto lin = [&](const std::string& name) {
        return nn::Linear{params_.get(name + ".weight"), params_.get(name + ".bias")};
    };
    msg_in_ = lin("msg.in");
    msg_conv_ = conv("msg.conv", 1, 1);
    img_conv_ = conv("img.conv", 1, 1);
    fuse_conv_ = conv("fuse.conv", 1, 1);
    out_conv_ = conv("out.conv", 1, 0);
    ext_in_ = conv("ext.in", 1, 1);
    ext_down1_ = conv("ext.down1", 2, 1);
    ext_down2_ = conv("ext.down2", 2, 1);
    ext_head_ = lin("ext.head");
    if (msg_in_.weight.dim(1) != arch_.message_bits || ext_head_.weight.dim(0) != arch_.message_bits)
        throw ConfigError("injector parameters do not match the message length");
}

void Injector::check(const Latent& z) const {
    const Shape want{arch_.latent_channels, arch_.latent_size, arch_.latent_size};
    if (z.shape() != want)
        throw ContractError("injector expects latent " + shape_string(want) + ", got " + shape_string(z.shape()));
}

ag::Var Injector::embed(const ag::Var& z, const Tensor& bits) const {
    const auto n = z.dim(0), c = arch_.latent_channels, half = arch_.latent_size / 2;
    if (bits.rank() != 2 || bits.dim(0) != n || bits.dim(1) != arch_.message_bits)
        throw ContractError("embed: bits must be [N, " + std::to_string(arch_.message_bits) + "]");
    Tensor signs = bits;
    for (auto& v : signs.values()) v = 2.0f * v - 1.0f;
    auto plane = ag::reshape(msg_in_(ag::constant(signs)), {n, c, half, half});
    plane = ag::silu(msg_conv_(ag::upsample2x(plane)));
    const auto feat = ag::silu(img_conv_(z));
    const auto fused = ag::silu(fuse_conv_(ag::concat_channels(feat, plane)));
    const auto delta = out_conv_(ag::concat_channels(fused, z));
    return ag::add(z, delta);
}

ag::Var Injector::score(const ag::Var& z) const {
    auto h = ag::silu(ext_in_(z));
    h = ag::silu(ext_down1_(h));
    h = ag::silu(ext_down2_(h));
    const auto n = z.dim(0);
    h = ag::reshape(h, {n, h.value().numel() / n});
    return ag::sigmoid(ext_head_(h));
}

Latent Injector::inject(const Latent& z, const BitMessage& m) const {
    check(z);
    if (static_cast<std::int64_t>(m.size()) != arch_.message_bits)
        throw ContractError("message has " + std::to_string(m.size()) + " bits, injector expects " +
                            std::to_string(arch_.message_bits));
    Tensor bits({1, arch_.message_bits});
    for (std::size_t i = 0; i < m.size(); ++i) bits[static_cast<std::int64_t>(i)] = m[i];
    ag::NoGradGuard no_grad;
    const auto out = embed(ag::constant(z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)})), bits);
    return Latent(out.value().reshaped(z.shape()));
}

std::vector<float> Injector::scores(const Latent& z) const {
    check(z);
    ag::NoGradGuard no_grad;
    const auto s = score(ag::constant(z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)})));
    return s.value().vec();
}

BitMessage Injector::extract(const Latent& z) const {
    std::vector<std::uint8_t> bits;
    for (float s : scores(z)) bits.push_back(s > 0.5f ? 1 : 0);
    return BitMessage(std::move(bits));
}

InjectorLoss injector_loss(const Injector& inj, const Tensor& latents, const Tensor& bits, const NoiseLayer& noise,
                           std::mt19937_64& rng) {
    return injector_loss(inj, latents, bits, [&](const ag::Var& zm) { return apply_noise(zm, noise, rng); });
}

InjectorLoss injector_loss(const Injector& inj, const Tensor& latents, const Tensor& bits, const LatentChannel& channel) {
    const auto z = ag::constant(latents);
    const auto zm = inj.embed(z, bits);
    const auto scores = inj.score(channel(zm));
    const auto index_loss = ag::mse(scores, ag::constant(bits));
    const auto injec_loss = ag::mse(zm, z);
    InjectorLoss out;
    out.total = ag::add(index_loss, ag::scale(injec_loss, inj.lambda()));
    out.index_loss = mean_squared_error(scores.value(), bits);
    out.injec_loss = mean_squared_error(zm.value(), z.value());
    return out;
}

namespace {

Tensor random_bits(std::int64_t n, std::int64_t length, std::mt19937_64& rng) {
    Tensor bits({n, length});
    std::bernoulli_distribution coin(0.5);
    for (auto& v : bits.values()) v = coin(rng) ? 1.0f : 0.0f;
    return bits;
}

}  // namespace

InjectorTrainingReport train_injector(Injector& inj, std::span<const Latent> latents, const InjectorTrainingConfig& cfg) {
    if (latents.empty()) throw ContractError("train_injector: empty latent set");
    if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("invalid injector training steps/batch size");
    cfg.noise.validate();
    InjectorTrainingReport report;
    nn::Adam opt(inj.params().trainable(), nn::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f, false, 1.0f});
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, latents.size() - 1);
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> items;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i) items.push_back(latents[pick(rng)]);
        const Tensor batch = stack(items);
        const Tensor bits = random_bits(cfg.batch_size, inj.arch().message_bits, rng);
        opt.zero_grad();
        const auto phase = step % (cfg.channel ? 3 : 2);
        auto loss = phase == 0   ? injector_loss(inj, batch, bits, cfg.noise, rng)
                    : phase == 1 && cfg.channel ? injector_loss(inj, batch, bits, cfg.channel)
                                                : injector_loss(inj, batch, bits, [](const ag::Var& v) { return v; });
        const double value = loss.total.value().item();
        if (!std::isfinite(value)) throw TrainingError("injector loss diverged", step);
        report.loss_history.push_back(value);
        ag::backward(loss.total);
        opt.step();
    }
    return report;
}

InjectorEval evaluate_injector(const Injector& inj, std::span<const Latent> latents, const NoiseLayer* noise,
                               std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    InjectorEval out;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const auto m = BitMessage::random(static_cast<std::size_t>(inj.arch().message_bits), rng);
        const auto zm = inj.inject(latents[i], m);
        out.perturbation_mse += mean_squared_error(zm, latents[i]);
        const auto received = noise ? apply_noise(zm, *noise, rng()) : zm;
        out.bit_accuracy += bit_accuracy(inj.extract(received), m);
    }
    if (!latents.empty()) {
        out.bit_accuracy /= static_cast<double>(latents.size());
        out.perturbation_mse /= static_cast<double>(latents.size());
    }
    return out;
}

}  // namespace resetedit
