#include "neo/colour.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace neo {

namespace {

using Vec = std::array<double, 3>;

// Distinct pixel values and their multiplicities. Lloyd iterations over the
// weighted distinct set are identical to iterations over every pixel.
struct WeightedPoints {
  std::vector<Vec> points;
  std::vector<double> weights;
};

WeightedPoints distinct_pixels(const Image& img) {
  std::map<std::array<std::uint8_t, 3>, std::size_t> counts;
  const int ch = img.channels();
  auto px = img.data();
  for (std::size_t i = 0; i < px.size(); i += static_cast<std::size_t>(ch)) {
    std::array<std::uint8_t, 3> key{};
    for (int c = 0; c < ch; ++c) key[c] = px[i + c];
    ++counts[key];
  }
  WeightedPoints wp;
  for (const auto& [key, n] : counts) {
    wp.points.push_back({double(key[0]), double(key[1]), double(key[2])});
    wp.weights.push_back(double(n));
  }
  return wp;
}

double sq_dist(const Vec& a, const Vec& b, int ch) {
  double d = 0.0;
  for (int c = 0; c < ch; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return d;
}

std::size_t nearest(const Vec& p, const std::vector<Vec>& centres, int ch) {
  std::size_t best = 0;
  double best_d = sq_dist(p, centres[0], ch);
  for (std::size_t j = 1; j < centres.size(); ++j) {
    const double d = sq_dist(p, centres[j], ch);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

// k-means++ over weighted points: first centre drawn proportionally to weight,
// subsequent centres proportionally to weight * D^2.
std::vector<Vec> seed_centres(const WeightedPoints& wp, std::size_t k, int ch, Rng& rng) {
  std::vector<Vec> centres;
  {
    std::discrete_distribution<std::size_t> pick(wp.weights.begin(), wp.weights.end());
    centres.push_back(wp.points[pick(rng)]);
  }
  std::vector<double> d2(wp.points.size());
  while (centres.size() < k) {
    for (std::size_t i = 0; i < wp.points.size(); ++i) {
      double best = sq_dist(wp.points[i], centres[0], ch);
      for (std::size_t j = 1; j < centres.size(); ++j) best = std::min(best, sq_dist(wp.points[i], centres[j], ch));
      d2[i] = best * wp.weights[i];
    }
    std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
    centres.push_back(wp.points[pick(rng)]);
  }
  return centres;
}

}  // namespace

std::vector<Cluster> kmeans_pixels(const Image& img, std::uint64_t seed, const KMeansOptions& opts) {
  if (img.empty()) throw std::invalid_argument("kmeans_pixels: empty image");
  if (opts.k < 1) throw std::invalid_argument("kmeans_pixels: k must be positive");
  const int ch = img.channels();
  const WeightedPoints wp = distinct_pixels(img);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(opts.k), wp.points.size());

  Rng rng(seed);
  std::vector<Vec> centres = seed_centres(wp, k, ch, rng);
  std::vector<std::size_t> assignment(wp.points.size(), 0);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    for (std::size_t i = 0; i < wp.points.size(); ++i) assignment[i] = nearest(wp.points[i], centres, ch);

    std::vector<Vec> sums(k, Vec{});
    std::vector<double> mass(k, 0.0);
    for (std::size_t i = 0; i < wp.points.size(); ++i) {
      const auto j = assignment[i];
      for (int c = 0; c < ch; ++c) sums[j][c] += wp.points[i][c] * wp.weights[i];
      mass[j] += wp.weights[i];
    }
    double max_move = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (mass[j] == 0.0) continue;  // empty cluster keeps its centre
      Vec next{};
      for (int c = 0; c < ch; ++c) next[c] = sums[j][c] / mass[j];
      max_move = std::max(max_move, std::sqrt(sq_dist(next, centres[j], ch)));
      centres[j] = next;
    }
    if (max_move <= opts.tolerance) break;
  }

  for (std::size_t i = 0; i < wp.points.size(); ++i) assignment[i] = nearest(wp.points[i], centres, ch);
  std::vector<Cluster> clusters(k);
  for (std::size_t j = 0; j < k; ++j) clusters[j].centre = centres[j];
  for (std::size_t i = 0; i < wp.points.size(); ++i)
    clusters[assignment[i]].count += static_cast<std::size_t>(wp.weights[i]);
  return clusters;
}

Colour dominant_colour(const Image& img, std::uint64_t seed) {
  const auto clusters = kmeans_pixels(img, seed);
  const int ch = img.channels();

  auto to_colour = [ch](const Cluster& cl) {
    Colour c;
    c.channels = ch;
    for (int i = 0; i < ch; ++i)
      c.value[i] = static_cast<std::uint8_t>(std::clamp(std::lround(cl.centre[i]), 0L, 255L));
    return c;
  };

  std::size_t best = 0;
  for (std::size_t j = 1; j < clusters.size(); ++j) {
    if (clusters[j].count > clusters[best].count ||
        (clusters[j].count == clusters[best].count && to_colour(clusters[j]).value < to_colour(clusters[best]).value)) {
      best = j;
    }
  }
  return to_colour(clusters[best]);
}

}  // namespace neo
