#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "resetedit/config.hpp"
#include "resetedit/nn.hpp"

namespace resetedit {

/// On-disk layout of one checkpoint directory:
///   manifest.json   kind, parameter table (name, shape, dtype, file, sha256, trainable)
///   config.json     snapshot of the config the model was built from
///   params/<i>.rste one tensor file per array
struct CheckpointInfo {
    std::string kind;
    std::string hash;  // SHA-256 of manifest.json, which itself lists every blob hash
    Config config;
};

// Returns the checkpoint hash.
std::string save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nn::ParamStore& params,
                            const Config& config);
// Verifies the kind and every blob hash; FormatError on mismatch.
nn::ParamStore load_checkpoint(const std::filesystem::path& dir, const std::string& kind, CheckpointInfo* info = nullptr);
std::string checkpoint_hash(const std::filesystem::path& dir);

std::string save_model(const std::filesystem::path& dir, const ToyDenoiser& m, const Config& c);
std::string save_model(const std::filesystem::path& dir, const ToyVae& m, const Config& c);
std::string save_model(const std::filesystem::path& dir, const ResidualCodec& m, const Config& c);
std::string save_model(const std::filesystem::path& dir, const Injector& m, const Config& c);

// Architectures come from the checkpoint's own config snapshot.
std::unique_ptr<ToyDenoiser> load_denoiser(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);
std::unique_ptr<ToyVae> load_vae(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);
std::unique_ptr<ResidualCodec> load_codec(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);
std::unique_ptr<Injector> load_injector(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace resetedit
