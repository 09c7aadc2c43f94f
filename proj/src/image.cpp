#include "neo/image.hpp"

#include <algorithm>
#include <sstream>

namespace neo {

namespace {

void check_dims(int width, int height, int channels) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("image dimensions must be at least 1x1");
  }
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("image must have 1 or 3 channels, got " + std::to_string(channels));
  }
}

void require_fit(const Image& img, Position pos, int m, int n, const char* what) {
  if (!fits(img, pos, m, n)) {
    std::ostringstream os;
    os << what << ": " << m << "x" << n << " rectangle at (" << pos.x << "," << pos.y
       << ") does not fit in " << img.width() << "x" << img.height() << " image";
    throw BoundsError(os.str());
  }
}

}  // namespace

std::string to_string(const Colour& c) {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < c.channels; ++i) {
    if (i) os << ',';
    os << static_cast<int>(c[i]);
  }
  os << ')';
  return os.str();
}

Image::Image(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels) {
  check_dims(width, height, channels);
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, 0);
}

Image::Image(int width, int height, int channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
  check_dims(width, height, channels);
  if (pixels_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw std::invalid_argument("pixel buffer length does not match width*height*channels");
  }
}

Image Image::filled(int width, int height, const Colour& colour) {
  Image img(width, height, colour.channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) img.set_pixel(x, y, colour);
  return img;
}

Colour Image::pixel(int x, int y) const {
  Colour c;
  c.channels = channels_;
  for (int k = 0; k < channels_; ++k) c.value[k] = at(x, y, k);
  return c;
}

void Image::set_pixel(int x, int y, const Colour& colour) {
  for (int k = 0; k < channels_; ++k) at(x, y, k) = colour[k];
}

bool fits(const Image& img, Position pos, int m, int n) {
  return m >= 1 && n >= 1 && pos.x >= 0 && pos.y >= 0 && pos.x + m <= img.width() &&
         pos.y + n <= img.height();
}

Image place_blocker(const Image& img, Position pos, const BlockerSpec& spec) {
  require_fit(img, pos, spec.m, spec.n, "place_blocker");
  if (spec.colour.channels != img.channels()) {
    throw ChannelMismatch("blocker colour channel count does not match image");
  }
  Image out = img;
  for (int y = pos.y; y < pos.y + spec.n; ++y)
    for (int x = pos.x; x < pos.x + spec.m; ++x) out.set_pixel(x, y, spec.colour);
  return out;
}

TriggerPatch extract_region(const Image& img, Position pos, int m, int n) {
  require_fit(img, pos, m, n, "extract_region");
  const int c = img.channels();
  Image patch(m, n, c);
  for (int y = 0; y < n; ++y) {
    auto src = img.data().subspan((static_cast<std::size_t>(pos.y + y) * img.width() + pos.x) * c,
                                  static_cast<std::size_t>(m) * c);
    std::copy(src.begin(), src.end(), patch.data().begin() + static_cast<std::ptrdiff_t>(y) * m * c);
  }
  return {pos, std::move(patch)};
}

Image paste_region(const Image& img, const TriggerPatch& patch, Position pos) {
  const Image& p = patch.patch;
  if (p.channels() != img.channels()) {
    throw ChannelMismatch("patch channel count does not match image");
  }
  require_fit(img, pos, p.width(), p.height(), "paste_region");
  const int c = img.channels();
  Image out = img;
  for (int y = 0; y < p.height(); ++y) {
    auto src = p.data().subspan(static_cast<std::size_t>(y) * p.width() * c,
                                static_cast<std::size_t>(p.width()) * c);
    std::copy(src.begin(), src.end(),
              out.data().begin() +
                  static_cast<std::ptrdiff_t>((static_cast<std::size_t>(pos.y + y) * img.width() + pos.x) * c));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Position random_position(Rng& rng, int img_w, int img_h, int m, int n) {
  if (m < 1 || n < 1 || m > img_w || n > img_h) {
    throw BoundsError("blocker " + std::to_string(m) + "x" + std::to_string(n) +
                      " does not fit in " + std::to_string(img_w) + "x" + std::to_string(img_h));
  }
  std::uniform_int_distribution<int> xs(0, img_w - m);
  std::uniform_int_distribution<int> ys(0, img_h - n);
  const int x = xs(rng);
  const int y = ys(rng);
  return {x, y};
}

}  // namespace neo
