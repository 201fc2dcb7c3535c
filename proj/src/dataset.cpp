#include "resetedit/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "resetedit/errors.hpp"

namespace resetedit {

namespace {

constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<const char*, 3> kShapeNames{"square", "circle", "triangle"};
constexpr std::array<std::array<float, 3>, 4> kColors{{{0.85f, 0.15f, 0.12f},
                                                      {0.15f, 0.75f, 0.20f},
                                                      {0.15f, 0.25f, 0.88f},
                                                      {0.90f, 0.82f, 0.15f}}};

struct Placement {
    std::int64_t cls;
    float cx, cy, radius;
    float tint[3];
    float bg[3];
    float bg_slope[2];
};

bool inside(std::int64_t shape, float px, float py, const Placement& p) {
    const float dx = px - p.cx, dy = py - p.cy;
    switch (shape) {
        case 0:
            return std::abs(dx) <= p.radius * 0.85f && std::abs(dy) <= p.radius * 0.85f;
        case 1:
            return dx * dx + dy * dy <= p.radius * p.radius;
        default: {
            // Upward isosceles triangle inscribed in the radius box.
            const float top = p.cy - p.radius, bottom = p.cy + p.radius;
            if (py < top || py > bottom) return false;
            const float half = p.radius * (py - top) / (bottom - top);
            return std::abs(dx) <= half;
        }
    }
}

std::vector<Placement> placements(std::int64_t n, std::int64_t classes, std::uint64_t seed, std::int64_t size) {
    if (classes <= 0) throw ConfigError("dataset needs at least one class");
    if (classes < 2) throw ConfigError("dataset needs at least two classes");
    if (classes > kMaxClasses) throw ConfigError("dataset supports at most " + std::to_string(kMaxClasses) + " classes");
    if (n < 1) throw ConfigError("dataset needs at least one image");
    if (size < 16) throw ConfigError("image size must be at least 16");

    std::mt19937_64 rng(seed);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
    std::shuffle(labels.begin(), labels.end(), rng);

    const float s = static_cast<float>(size);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::vector<Placement> out;
    out.reserve(labels.size());
    for (auto cls : labels) {
        Placement p{};
        p.cls = cls;
        p.radius = s * (0.2f + 0.1f * unit(rng));
        const float margin = p.radius + 1.0f;
        p.cx = margin + (s - 2 * margin) * unit(rng);
        p.cy = margin + (s - 2 * margin) * unit(rng);
        for (float& t : p.tint) t = 0.06f * (unit(rng) - 0.5f);
        const float gray = 0.35f + 0.2f * unit(rng);
        for (float& b : p.bg) b = gray + 0.04f * (unit(rng) - 0.5f);
        p.bg_slope[0] = 0.1f * (unit(rng) - 0.5f);
        p.bg_slope[1] = 0.1f * (unit(rng) - 0.5f);
        out.push_back(p);
    }
    return out;
}

constexpr int kSuper = 3;

Image render(const Placement& p, std::int64_t size) {
    Image img(Tensor({3, size, size}));
    const auto shape = class_shape(p.cls);
    const auto& col = kColors[static_cast<std::size_t>(class_color(p.cls))];
    const float s = static_cast<float>(size);
    for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx)
                    hits += inside(shape, x + (sx + 0.5f) / kSuper, y + (sy + 0.5f) / kSuper, p);
            const float cover = static_cast<float>(hits) / (kSuper * kSuper);
            const float u = (x + 0.5f) / s - 0.5f, v = (y + 0.5f) / s - 0.5f;
            for (int c = 0; c < 3; ++c) {
                const float bg = p.bg[c] + p.bg_slope[0] * u + p.bg_slope[1] * v;
                const float fg = col[static_cast<std::size_t>(c)] + p.tint[c];
                img.at(c, y, x) = std::clamp(cover * fg + (1.0f - cover) * bg, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

}  // namespace

std::int64_t class_shape(std::int64_t id) {
    if (id < 0 || id >= kMaxClasses) throw ContractError("class id out of range");
    return id / 4;
}

std::int64_t class_color(std::int64_t id) {
    if (id < 0 || id >= kMaxClasses) throw ContractError("class id out of range");
    return id % 4;
}

std::string class_name(std::int64_t id) {
    return std::string(kColorNames[static_cast<std::size_t>(class_color(id))]) + " " +
           kShapeNames[static_cast<std::size_t>(class_shape(id))];
}

std::vector<LabeledImage> make_dataset(std::int64_t n_images, std::int64_t classes, std::uint64_t seed,
                                       std::int64_t image_size) {
    const auto ps = placements(n_images, classes, seed, image_size);
    std::vector<LabeledImage> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back({render(p, image_size), Condition(p.cls)});
    return out;
}

std::vector<std::uint8_t> dataset_shape_mask(std::int64_t index, std::int64_t n_images, std::int64_t classes,
                                             std::uint64_t seed, std::int64_t image_size) {
    const auto ps = placements(n_images, classes, seed, image_size);
    if (index < 0 || index >= n_images) throw ContractError("dataset index out of range");
    const auto& p = ps[static_cast<std::size_t>(index)];
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(image_size * image_size));
    for (std::int64_t y = 0; y < image_size; ++y)
        for (std::int64_t x = 0; x < image_size; ++x)
            mask[static_cast<std::size_t>(y * image_size + x)] = inside(class_shape(p.cls), x + 0.5f, y + 0.5f, p);
    return mask;
}

}  // namespace resetedit
