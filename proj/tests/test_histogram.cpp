#include <doctest.h>

#include <cmath>
#include <map>

#include "neo/histogram.hpp"

using namespace neo;

namespace {

// Reference implementation over sparse per-channel counts.
double reference_distance(const Image& a, const Image& b) {
  const int ch = a.channels();
  double total = 0.0;
  for (int c = 0; c < ch; ++c) {
    std::map<int, double> pa;
    std::map<int, double> pb;
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) pa[a.at(x, y, c)] += 1.0 / double(a.pixel_count());
    for (int y = 0; y < b.height(); ++y)
      for (int x = 0; x < b.width(); ++x) pb[b.at(x, y, c)] += 1.0 / double(b.pixel_count());
    double bc = 0.0;
    for (const auto& [v, p] : pa)
      if (auto it = pb.find(v); it != pb.end()) bc += std::sqrt(p * it->second);
    total += std::sqrt(std::max(0.0, 1.0 - bc));
  }
  return total / ch;
}

Image noise_image(Rng& rng, int w, int h, int ch) {
  Image img(w, h, ch);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

}  // namespace

TEST_CASE("histogram bins are normalized per channel") {
  Image img(2, 2, 3, {0, 1, 2, 0, 1, 2, 0, 9, 2, 5, 9, 2});
  const Histogram h = histogram(img);
  REQUIRE(h.channels.size() == 3);
  CHECK(h.channels[0][0] == doctest::Approx(0.75));
  CHECK(h.channels[0][5] == doctest::Approx(0.25));
  CHECK(h.channels[1][1] == doctest::Approx(0.5));
  CHECK(h.channels[1][9] == doctest::Approx(0.5));
  CHECK(h.channels[2][2] == doctest::Approx(1.0));
}

TEST_CASE("half-black image against all-black has distance sqrt(1 - 1/sqrt(2))") {
  Image half(2, 1, 1, {0, 255});
  Image black(2, 1, 1, {0, 0});
  const double expected = std::sqrt(1.0 - std::sqrt(0.5));
  CHECK(expected == doctest::Approx(0.5412).epsilon(1e-4));
  CHECK(bhattacharyya(histogram(half), histogram(black)) == doctest::Approx(expected));
}

TEST_CASE("distance basics: identity, disjoint support, channel mismatch") {
  Rng rng(3);
  const Image a = noise_image(rng, 8, 8, 3);
  CHECK(bhattacharyya(histogram(a), histogram(a)) == doctest::Approx(0.0).epsilon(1e-6));
  const Image lo = Image::filled(4, 4, Colour::rgb(1, 1, 1));
  const Image hi = Image::filled(4, 4, Colour::rgb(200, 200, 200));
  CHECK(bhattacharyya(histogram(lo), histogram(hi)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(bhattacharyya(histogram(a), histogram(Image(8, 8, 1))), ChannelMismatch);
}

TEST_CASE("distance is symmetric, bounded and matches a sparse reference") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int ch = trial % 2 ? 1 : 3;
    const Image a = noise_image(rng, 6 + trial % 5, 7, ch);
    const Image b = noise_image(rng, 9, 4 + trial % 3, ch);
    const double d = bhattacharyya(histogram(a), histogram(b));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(d == doctest::Approx(bhattacharyya(histogram(b), histogram(a))));
    CHECK(d == doctest::Approx(reference_distance(a, b)).epsilon(1e-9));
  }
}
