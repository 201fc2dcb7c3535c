#pragma once

#include <random>
#include <span>
#include <vector>

#include "resetedit/nn.hpp"
#include "resetedit/types.hpp"

namespace resetedit {

/// K x D matrix of codewords.
class Codebook {
public:
    Codebook() = default;
    explicit Codebook(Tensor entries);

    std::int64_t size() const { return entries_.rank() == 2 ? entries_.dim(0) : 0; }
    std::int64_t dim() const { return entries_.rank() == 2 ? entries_.dim(1) : 0; }
    const Tensor& entries() const { return entries_; }
    std::span<const float> row(std::int64_t k) const;

private:
    Tensor entries_{Shape{0, 0}};
};

struct QuantizeResult {
    std::int64_t index = 0;
    double distance_sq = 0.0;
};

// Nearest codeword by Euclidean distance; ties go to the lowest index.
QuantizeResult quantize(std::span<const float> feature, const Codebook& codebook);

/// H' x W' grid of codebook indices, row-major.
class IndexMap {
public:
    IndexMap() = default;
    IndexMap(std::int64_t rows, std::int64_t cols, std::vector<std::int64_t> indices);
    IndexMap(std::int64_t rows, std::int64_t cols) : IndexMap(rows, cols, std::vector<std::int64_t>(rows * cols, 0)) {}

    std::int64_t rows() const { return rows_; }
    std::int64_t cols() const { return cols_; }
    std::int64_t at(std::int64_t i, std::int64_t j) const { return indices_[static_cast<std::size_t>(i * cols_ + j)]; }
    std::int64_t& at(std::int64_t i, std::int64_t j) { return indices_[static_cast<std::size_t>(i * cols_ + j)]; }
    const std::vector<std::int64_t>& indices() const { return indices_; }

    friend bool operator==(const IndexMap&, const IndexMap&) = default;

private:
    std::int64_t rows_ = 0;
    std::int64_t cols_ = 0;
    std::vector<std::int64_t> indices_;
};

struct CodecArch {
    std::int64_t latent_channels = 4;
    std::int64_t latent_size = 16;
    std::int64_t hidden = 32;
    std::int64_t code_dim = 64;   // D; equals the encoder output channel count
    std::int64_t codebook_size = 16;  // K
    std::int64_t downsample = 4;  // latent_size / H'
};

/// VQ-VAE residual compressor: strided conv encoder to [D, H', W'],
/// nearest-codeword quantization, conv decoder back to latent geometry.
/// The codebook is a buffer updated by exponential moving averages, never by
/// gradients.
class ResidualCodec {
public:
    ResidualCodec(const CodecArch& arch, std::uint64_t seed, float beta = 1.0f);
    ResidualCodec(const CodecArch& arch, nn::ParamStore params, float beta = 1.0f);

    IndexMap compress(const Latent& z_r) const;
    Latent reconstruct(const IndexMap& indices) const;

    // Differentiable pieces, batch-first.
    ag::Var encode(const ag::Var& x) const;
    ag::Var decode(const ag::Var& zq) const;

    // Nearest codewords for every spatial vector of an encoder output [N,D,H',W'].
    Tensor quantize_features(const Tensor& features, std::vector<std::int64_t>* indices = nullptr) const;

    Codebook codebook() const;
    void set_codebook(const Tensor& entries);

    const CodecArch& arch() const { return arch_; }
    float beta() const { return beta_; }
    void set_beta(float b) { beta_ = b; }
    std::int64_t grid_size() const { return arch_.latent_size / arch_.downsample; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

private:
    void bind();
    void check_latent(const Tensor& z) const;

    CodecArch arch_;
    float beta_;
    nn::ParamStore params_;
    std::vector<nn::Conv2d> enc_;
    std::vector<nn::Conv2d> dec_;
};

struct CodecLoss {
    ag::Var total;
    double recon = 0.0;
    double quanti = 0.0;
};

// L = L_recon + beta * L_quanti with L_recon = mean (x_r - x)^2 and
// L_quanti = mean (z_e - sg[z_q])^2. With straight_through the reconstruction
// gradient is copied across quantization to the encoder; without it the
// returned graph is the exact derivative (quantized path held constant).
CodecLoss codec_loss(const ResidualCodec& codec, const Tensor& batch, bool straight_through = true);

struct CodecTrainingConfig {
    float learning_rate = 3e-4f;
    bool amsgrad = true;
    std::int64_t steps = 2000;
    std::int64_t batch_size = 32;
    float ema_decay = 0.99f;
    std::uint64_t seed = 0;
};

struct CodecTrainingReport {
    std::vector<double> loss_history;
    double initial_recon_mse = 0.0;
    double final_recon_mse = 0.0;
};

CodecTrainingReport train_codec(ResidualCodec& codec, std::span<const Latent> samples, const CodecTrainingConfig& cfg,
                                std::span<const Latent> held_out = {});

// Mean per-element squared error of reconstruct(compress(z)) over the set.
double codec_reconstruction_mse(const ResidualCodec& codec, std::span<const Latent> samples);

}  // namespace resetedit
