#pragma once

#include <cstdint>
#include <string>

#include "resetedit/errors.hpp"
#include "resetedit/tensor.hpp"

namespace resetedit {

/// Rank-3 [C,H,W] latent: z_T, z_0, residuals and every latent derived from them.
class Latent : public Tensor {
public:
    Latent() : Tensor(Shape{0, 0, 0}) {}
    explicit Latent(Tensor t) : Tensor(std::move(t)) {
        if (rank() != 3) throw ContractError("latent must be rank 3, got " + shape_string(shape()));
    }
    Latent(std::int64_t c, std::int64_t h, std::int64_t w, float fill = 0.0f) : Tensor(Shape{c, h, w}, fill) {}
};

/// Rank-3 [3,H,W] RGB image with values in [0,1].
class Image : public Tensor {
public:
    Image() : Tensor(Shape{3, 0, 0}) {}
    explicit Image(Tensor t) : Tensor(std::move(t)) {
        if (rank() != 3 || dim(0) != 3) throw ContractError("image must be [3,H,W], got " + shape_string(shape()));
    }
};

inline Latent operator+(const Latent& a, const Latent& b) {
    return Latent(static_cast<const Tensor&>(a) + static_cast<const Tensor&>(b));
}
inline Latent operator-(const Latent& a, const Latent& b) {
    return Latent(static_cast<const Tensor&>(a) - static_cast<const Tensor&>(b));
}

/// Discrete conditioning label (class id) or the null condition used by the
/// unconditional branch of guidance.
class Condition {
public:
    static constexpr std::int64_t kNullId = -1;

    constexpr Condition() = default;
    constexpr explicit Condition(std::int64_t id) : id_(id) {}
    static constexpr Condition null() { return Condition(); }

    constexpr std::int64_t id() const { return id_; }
    constexpr bool is_null() const { return id_ == kNullId; }
    friend constexpr bool operator==(Condition, Condition) = default;

private:
    std::int64_t id_ = kNullId;
};

struct GuidanceConfig {
    float scale = 0.0f;

    explicit GuidanceConfig(float w = 0.0f) : scale(w) {
        if (!(w >= 0.0f)) throw ConfigError("guidance scale must be >= 0");
    }
};

/// Training-step index of the noise level plus its cumulative alpha.
struct Timestep {
    std::int64_t train_step = 0;
    float alpha_bar = 1.0f;
};

}  // namespace resetedit
