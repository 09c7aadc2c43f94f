#include "neo/png_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace neo {

namespace {

struct PngImageGuard {
  png_image* img;
  ~PngImageGuard() { png_image_free(img); }
};

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  PngImageGuard guard{&png};

  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw PngError(std::string("png decode: ") + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_ALPHA) {
    throw PngError("png decode: images with an alpha channel are not supported");
  }
  const bool colour = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = colour ? 3 : 1;

  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    throw PngError(std::string("png decode: ") + png.message);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), channels, std::move(pixels));
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw PngError("png encode: empty image");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  PngImageGuard guard{&png};

  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(png, size, 0, img.data().data(), 0, nullptr)) {
    throw PngError(std::string("png encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.data().data(), 0, nullptr)) {
    throw PngError(std::string("png encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PngError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const PngError& e) {
    throw PngError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PngError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PngError("write failed: " + path.string());
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("base64: invalid character");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding; drop them.
  std::size_t len = static_cast<std::size_t>(n);
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace neo
