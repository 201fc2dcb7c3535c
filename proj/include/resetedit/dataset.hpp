#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resetedit/types.hpp"

namespace resetedit {

struct LabeledImage {
    Image image;
    Condition cond;
};

// Class id = shape * 4 + color over colors {red, green, blue, yellow} and
// shapes {square, circle, triangle}; at most 12 classes.
inline constexpr std::int64_t kMaxClasses = 12;
std::string class_name(std::int64_t id);
std::int64_t class_shape(std::int64_t id);
std::int64_t class_color(std::int64_t id);

// Procedural colored shapes on a soft gray background. Labels are balanced
// (round-robin, then shuffled) and every image is a pure function of the seed.
std::vector<LabeledImage> make_dataset(std::int64_t n_images, std::int64_t classes, std::uint64_t seed,
                                       std::int64_t image_size = 32);

// Mask of the shape pixels for one rendered sample (same seed stream as
// make_dataset); used by tests to check colors inside the shape.
std::vector<std::uint8_t> dataset_shape_mask(std::int64_t index, std::int64_t n_images, std::int64_t classes,
                                             std::uint64_t seed, std::int64_t image_size = 32);

}  // namespace resetedit
