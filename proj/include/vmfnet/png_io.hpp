#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vmfnet/errors.hpp"

namespace vmfnet {

struct GrayImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> pixels;  // row-major, one byte per pixel

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }
};

// 8-bit grayscale (color type 0). Deterministic byte stream for fixed input.
void write_gray_png(const std::filesystem::path& path, const GrayImage& img);

// 8-bit indexed (color type 3); pixel values are palette indices.
void write_indexed_png(const std::filesystem::path& path, const GrayImage& img,
                       const std::vector<std::array<std::uint8_t, 3>>& palette);

// Reads an 8-bit grayscale or indexed PNG produced by the writers above
// (all five scanline filters are handled). Returns raw byte values; for
// indexed images these are the palette indices.
GrayImage read_png8(const std::filesystem::path& path);

// In-memory decode, used by the loader after checksum verification.
GrayImage decode_png8(const std::vector<std::uint8_t>& bytes, const std::string& name);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);

}  // namespace vmfnet
