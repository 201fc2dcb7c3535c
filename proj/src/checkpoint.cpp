#include "resetedit/checkpoint.hpp"

#include <json.hpp>

#include "resetedit/errors.hpp"
#include "resetedit/tensor_io.hpp"

namespace resetedit {

using nlohmann::json;
namespace fs = std::filesystem;

std::string save_checkpoint(const fs::path& dir, const std::string& kind, const nn::ParamStore& params,
                            const Config& config) {
    fs::create_directories(dir / "params");
    json table = json::array();
    std::size_t i = 0;
    for (const auto& e : params.entries()) {
        const auto file = "params/" + std::to_string(i++) + ".rste";
        const auto blob = io::encode_tensor(e.var.value());
        io::write_file_atomic(dir / file, blob);
        table.push_back({{"name", e.name},
                         {"shape", e.var.value().shape()},
                         {"dtype", "float32"},
                         {"file", file},
                         {"sha256", io::sha256_hex(blob)},
                         {"trainable", e.trainable}});
    }
    const auto config_text = config.to_json();
    io::write_text_atomic(dir / "config.json", config_text);
    json manifest = {{"format", "resetedit-checkpoint"},
                     {"version", 1},
                     {"kind", kind},
                     {"config_sha256", io::sha256_hex(config_text)},
                     {"params", table}};
    const auto text = manifest.dump(2) + "\n";
    io::write_text_atomic(dir / "manifest.json", text);
    return io::sha256_hex(text);
}

std::string checkpoint_hash(const fs::path& dir) { return io::sha256_hex(io::read_text(dir / "manifest.json")); }

nn::ParamStore load_checkpoint(const fs::path& dir, const std::string& kind, CheckpointInfo* info) {
    if (!fs::exists(dir / "manifest.json")) throw FormatError("no checkpoint manifest in " + dir.string());
    const auto text = io::read_text(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("corrupt checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "resetedit-checkpoint") throw FormatError("not a checkpoint manifest");
    if (manifest.value("kind", "") != kind)
        throw FormatError("checkpoint holds a " + manifest.value("kind", "?") + ", expected " + kind);
    const auto config_text = io::read_text(dir / "config.json");
    if (io::sha256_hex(config_text) != manifest.value("config_sha256", ""))
        throw FormatError("checkpoint config snapshot does not match its manifest");

    nn::ParamStore store;
    for (const auto& p : manifest.at("params")) {
        const auto blob = io::read_file(dir / p.at("file").get<std::string>());
        if (io::sha256_hex(blob) != p.at("sha256").get<std::string>())
            throw FormatError("checkpoint blob hash mismatch for " + p.at("name").get<std::string>());
        auto rec = io::decode_tensor(blob);
        if (rec.dtype != io::DType::float32 || rec.shape != p.at("shape").get<Shape>())
            throw FormatError("checkpoint blob shape mismatch for " + p.at("name").get<std::string>());
        store.add(p.at("name").get<std::string>(), Tensor(rec.shape, std::move(rec.floats)), p.at("trainable").get<bool>());
    }
    if (info) {
        info->kind = kind;
        info->hash = io::sha256_hex(text);
        info->config = Config::from_json(config_text);
    }
    return store;
}

std::string save_model(const fs::path& dir, const ToyDenoiser& m, const Config& c) {
    return save_checkpoint(dir, "denoiser", m.params(), c);
}
std::string save_model(const fs::path& dir, const ToyVae& m, const Config& c) {
    return save_checkpoint(dir, "vae", m.params(), c);
}
std::string save_model(const fs::path& dir, const ResidualCodec& m, const Config& c) {
    return save_checkpoint(dir, "codec", m.params(), c);
}
std::string save_model(const fs::path& dir, const Injector& m, const Config& c) {
    return save_checkpoint(dir, "injector", m.params(), c);
}

std::unique_ptr<ToyDenoiser> load_denoiser(const fs::path& dir, CheckpointInfo* info) {
    CheckpointInfo local;
    auto store = load_checkpoint(dir, "denoiser", &local);
    auto out = std::make_unique<ToyDenoiser>(local.config.denoiser_arch(), std::move(store));
    if (info) *info = std::move(local);
    return out;
}

std::unique_ptr<ToyVae> load_vae(const fs::path& dir, CheckpointInfo* info) {
    CheckpointInfo local;
    auto store = load_checkpoint(dir, "vae", &local);
    auto out = std::make_unique<ToyVae>(local.config.vae_arch(), std::move(store));
    if (info) *info = std::move(local);
    return out;
}

std::unique_ptr<ResidualCodec> load_codec(const fs::path& dir, CheckpointInfo* info) {
    CheckpointInfo local;
    auto store = load_checkpoint(dir, "codec", &local);
    auto out = std::make_unique<ResidualCodec>(local.config.codec_arch(), std::move(store), local.config.codec.beta);
    if (info) *info = std::move(local);
    return out;
}

std::unique_ptr<Injector> load_injector(const fs::path& dir, CheckpointInfo* info) {
    CheckpointInfo local;
    auto store = load_checkpoint(dir, "injector", &local);
    auto out = std::make_unique<Injector>(local.config.injector_arch(), std::move(store), local.config.injector.lambda);
    if (info) *info = std::move(local);
    return out;
}

}  // namespace resetedit
