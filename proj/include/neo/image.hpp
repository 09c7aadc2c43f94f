#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace neo {

using Rng = std::mt19937_64;

/// Raised when a rectangle does not fit inside an image.
class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised when two images (or an image and a colour) disagree on channel count.
class ChannelMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Top-left corner of a rectangle, in pixel coordinates.
struct Position {
  int x = 0;
  int y = 0;

  auto operator<=>(const Position&) const = default;
};

/// A pixel value with 1 (grayscale) or 3 (RGB) channels.
struct Colour {
  std::array<std::uint8_t, 3> value{};
  int channels = 3;

  static Colour gray(std::uint8_t v) { return Colour{{v, 0, 0}, 1}; }
  static Colour rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) { return Colour{{r, g, b}, 3}; }

  std::uint8_t operator[](int c) const { return value[static_cast<std::size_t>(c)]; }
  bool operator==(const Colour&) const = default;
};

std::string to_string(const Colour& c);

/// Row-major 8-bit image with interleaved channels.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels);
  Image(int width, int height, int channels, std::vector<std::uint8_t> pixels);

  static Image filled(int width, int height, const Colour& colour);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  std::uint8_t at(int x, int y, int c) const { return pixels_[index(x, y, c)]; }
  std::uint8_t& at(int x, int y, int c) { return pixels_[index(x, y, c)]; }

  Colour pixel(int x, int y) const;
  void set_pixel(int x, int y, const Colour& colour);

  std::span<const std::uint8_t> data() const { return pixels_; }
  std::span<std::uint8_t> data() { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// An m x n rectangle of uniform colour used to occlude a candidate trigger region.
struct BlockerSpec {
  int m = 1;  // width
  int n = 1;  // height
  Colour colour;
};

/// Pixels lifted from an image together with where they came from.
struct TriggerPatch {
  Position position;
  Image patch;

  bool operator==(const TriggerPatch&) const = default;
};

bool fits(const Image& img, Position pos, int m, int n);

Image place_blocker(const Image& img, Position pos, const BlockerSpec& spec);
TriggerPatch extract_region(const Image& img, Position pos, int m, int n);
Image paste_region(const Image& img, const TriggerPatch& patch, Position pos);

/// Independent seed for sub-stream `stream` of `base` (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Uniform top-left corner for an m x n rectangle inside an img_w x img_h frame.
Position random_position(Rng& rng, int img_w, int img_h, int m, int n);

}  // namespace neo
