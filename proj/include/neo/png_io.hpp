#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "neo/image.hpp"

namespace neo {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit grayscale and RGB only. Images carrying an alpha channel are rejected.
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& img);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace neo
