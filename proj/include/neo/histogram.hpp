#pragma once

#include <array>
#include <vector>

#include "neo/image.hpp"

namespace neo {

/// Per-channel 256-bin intensity distribution; each channel sums to 1.
struct Histogram {
  std::vector<std::array<double, 256>> channels;
};

Histogram histogram(const Image& img);

/// Mean over channels of sqrt(1 - BC), BC being the Bhattacharyya coefficient.
double bhattacharyya(const Histogram& h1, const Histogram& h2);

}  // namespace neo
