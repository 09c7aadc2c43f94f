#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "neo/image.hpp"

namespace neo {

struct KMeansOptions {
  int k = 3;
  int max_iterations = 50;
  double tolerance = 1e-4;  // max centre movement, in channel units
};

struct Cluster {
  std::array<double, 3> centre{};
  std::size_t count = 0;
};

/// Lloyd's k-means over the image's pixel vectors with k-means++ seeding.
/// k is reduced to the number of distinct pixel values when fewer exist.
std::vector<Cluster> kmeans_pixels(const Image& img, std::uint64_t seed, const KMeansOptions& opts = {});

/// Centre of the most populated k = 3 cluster, rounded and clamped to 8 bits.
/// Equal populations resolve to the lexicographically smaller colour.
Colour dominant_colour(const Image& img, std::uint64_t seed);

}  // namespace neo
