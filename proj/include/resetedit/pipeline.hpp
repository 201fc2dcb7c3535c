#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "resetedit/diffusion.hpp"
#include "resetedit/injector.hpp"
#include "resetedit/pixel_codec.hpp"
#include "resetedit/residual_codec.hpp"

namespace resetedit {

class NoisePredictor;

/// Residual compressor seen by the pipeline: latent -> index map -> latent.
class ResidualCoder {
public:
    virtual ~ResidualCoder() = default;
    virtual IndexMap compress(const Latent& z_r) const = 0;
    virtual Latent reconstruct(const IndexMap& m) const = 0;
    virtual std::int64_t codebook_size() const = 0;
    virtual std::int64_t grid_rows() const = 0;
    virtual std::int64_t grid_cols() const = 0;
};

/// Message carrier seen by the pipeline: hides bits in a latent, reads them back.
class MessageCarrier {
public:
    virtual ~MessageCarrier() = default;
    virtual Latent inject(const Latent& z, const BitMessage& m) const = 0;
    virtual BitMessage extract(const Latent& z) const = 0;
};

class CodecCoder final : public ResidualCoder {
public:
    explicit CodecCoder(const ResidualCodec& codec) : codec_(codec) {}
    IndexMap compress(const Latent& z_r) const override { return codec_.compress(z_r); }
    Latent reconstruct(const IndexMap& m) const override { return codec_.reconstruct(m); }
    std::int64_t codebook_size() const override { return codec_.arch().codebook_size; }
    std::int64_t grid_rows() const override { return codec_.grid_size(); }
    std::int64_t grid_cols() const override { return codec_.grid_size(); }

private:
    const ResidualCodec& codec_;
};

class InjectorCarrier final : public MessageCarrier {
public:
    explicit InjectorCarrier(const Injector& inj) : inj_(inj) {}
    Latent inject(const Latent& z, const BitMessage& m) const override { return inj_.inject(z, m); }
    BitMessage extract(const Latent& z) const override { return inj_.extract(z); }

private:
    const Injector& inj_;
};

/// Test double: remembers every residual it compresses and hands out the
/// running count as the index map, so reconstruct is exact.
class LosslessTableCoder final : public ResidualCoder {
public:
    LosslessTableCoder(std::int64_t codebook_size = 16, std::int64_t rows = 4, std::int64_t cols = 4);
    IndexMap compress(const Latent& z_r) const override;
    Latent reconstruct(const IndexMap& m) const override;
    std::int64_t codebook_size() const override { return k_; }
    std::int64_t grid_rows() const override { return rows_; }
    std::int64_t grid_cols() const override { return cols_; }

private:
    std::int64_t k_, rows_, cols_;
    mutable std::vector<Latent> table_;
};

/// Test double: leaves the latent untouched (z_m == z) and passes the message
/// through a side channel instead.
class IdentityCarrier final : public MessageCarrier {
public:
    Latent inject(const Latent& z, const BitMessage& m) const override;
    BitMessage extract(const Latent& z) const override;

private:
    mutable BitMessage last_;
};

struct Models {
    const NoisePredictor* denoiser = nullptr;
    const PixelCodec* pixel = nullptr;
    const ResidualCoder* coder = nullptr;
    const MessageCarrier* carrier = nullptr;
    NoiseSchedule schedule;

    void check() const;
};

struct GenerationRecord {
    Latent z_T, z_0, z_r;
    IndexMap m_r;
    BitMessage message;
    Latent z_0m;
    Image image;  // X^m
    Condition cond;
    float guidance = 0.0f;
    std::uint64_t seed = 0;
};

// Pipeline latents live on a fixed grid of 2^-16 so that sums and
// differences of two of them (|values| < 128) are exact in float32. Without
// it z_T - z_0 + z_0 != z_T in roughly a third of the elements.
inline constexpr int kLatentGridBits = 16;
inline constexpr float kLatentGridLimit = 128.0f;
Latent snap_to_grid(const Latent& z);

Latent starting_latent(std::uint64_t seed, const Shape& latent_shape);
// Final latent of the guided trajectory from z_T, snapped to the grid.
Latent generate_latent(const Latent& z_T, Condition cond, GuidanceConfig guidance, const Models& models);

GenerationRecord generate_with_embedding(std::uint64_t seed, Condition cond, GuidanceConfig guidance,
                                         const Models& models);

struct RecoveryOptions {
    LatentOptConfig opt;
    // Round X^m to 8-bit pixels before re-encoding, as a saved file would.
    bool quantize_8bit = false;
};

struct RecoveryRecord {
    Latent z_em;        // encode(X^m)
    Latent z_em_opt;    // after latent optimization
    BitMessage message; // extracted
    IndexMap m_r;
    Latent z_er;        // reconstructed residual
    Latent z_T_star;
    std::vector<double> opt_loss_history;
    std::map<std::string, double> diagnostics;
};

// `truth`, when given, only feeds diagnostics (bit accuracy, latent errors).
RecoveryRecord recover_starting_latent(const Image& image, const Models& models, const RecoveryOptions& options,
                                       const GenerationRecord* truth = nullptr);

Image edit(const Latent& z_T_star, Condition new_cond, GuidanceConfig guidance, const Models& models);

struct Metrics {
    double mse = 0.0;
    double psnr = std::numeric_limits<double>::infinity();
};

Metrics metrics(const Tensor& a, const Tensor& b);
double psnr_from_mse(double mse);

struct StepNorm {
    std::int64_t t = 0;
    double drift_rms = 0.0;
    double estimation_rms = 0.0;
    double total_rms = 0.0;
};

// Drift and estimation terms at every state of the generation trajectory from z_T.
std::vector<StepNorm> step_error_norms(const Latent& z_T, Condition cond, GuidanceConfig guidance, const Models& models);

struct BaselineRow {
    std::string method;
    double latent_mse = 0.0;   // MSE(z_hat_T, z_T)
    double replay_mse = 0.0;   // MSE(edit(z_hat_T, cond), decode(z_0))
    double replay_psnr = 0.0;
};

struct BaselineReport {
    std::vector<BaselineRow> rows;  // "resetedit", "ddim_inversion"
    std::vector<StepNorm> steps;    // along the generation trajectory
    std::string to_tsv() const;
};

BaselineReport compare_baseline(const GenerationRecord& record, const Models& models, const RecoveryOptions& options,
                                GuidanceConfig edit_guidance);

}  // namespace resetedit
