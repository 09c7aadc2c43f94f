#include "neo/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace neo {

Histogram histogram(const Image& img) {
  if (img.empty()) throw std::invalid_argument("histogram: empty image");
  const int ch = img.channels();
  std::vector<std::array<std::size_t, 256>> counts(static_cast<std::size_t>(ch));
  for (auto& c : counts) c.fill(0);
  auto px = img.data();
  for (std::size_t i = 0; i < px.size(); ++i) ++counts[i % ch][px[i]];

  Histogram h;
  h.channels.resize(static_cast<std::size_t>(ch));
  const double total = static_cast<double>(img.pixel_count());
  for (int c = 0; c < ch; ++c)
    for (int b = 0; b < 256; ++b) h.channels[c][b] = static_cast<double>(counts[c][b]) / total;
  return h;
}

double bhattacharyya(const Histogram& h1, const Histogram& h2) {
  if (h1.channels.size() != h2.channels.size()) {
    throw ChannelMismatch("bhattacharyya: histograms have different channel counts");
  }
  if (h1.channels.empty()) throw std::invalid_argument("bhattacharyya: empty histogram");
  double sum = 0.0;
  for (std::size_t c = 0; c < h1.channels.size(); ++c) {
    double bc = 0.0;
    for (int b = 0; b < 256; ++b) bc += std::sqrt(h1.channels[c][b] * h2.channels[c][b]);
    sum += std::sqrt(std::max(0.0, 1.0 - bc));
  }
  return std::clamp(sum / static_cast<double>(h1.channels.size()), 0.0, 1.0);
}

}  // namespace neo
