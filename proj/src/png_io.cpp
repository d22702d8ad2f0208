#include "vmfnet/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace vmfnet {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> deflate_bytes(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("png: deflate failed");
  out.resize(bound);
  return out;
}

std::vector<std::uint8_t> encode_png(const GrayImage& img, int color_type,
                                     const std::vector<std::array<std::uint8_t, 3>>* palette) {
  if (img.w <= 0 || img.h <= 0 || img.pixels.size() != static_cast<std::size_t>(img.w) * img.h)
    throw InvalidInputError("png: inconsistent image buffer");
  std::vector<std::uint8_t> file(kSignature, kSignature + 8);
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(file, "IHDR", ihdr);
  if (palette) {
    std::vector<std::uint8_t> plte;
    for (const auto& rgb : *palette) plte.insert(plte.end(), rgb.begin(), rgb.end());
    append_chunk(file, "PLTE", plte);
  }
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.h) * (img.w + 1));
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::size_t>(y) * img.w,
               img.pixels.begin() + static_cast<std::size_t>(y + 1) * img.w);
  }
  append_chunk(file, "IDAT", deflate_bytes(raw));
  append_chunk(file, "IEND", {});
  return file;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_gray_png(const std::filesystem::path& path, const GrayImage& img) {
  write_file(path, encode_png(img, 0, nullptr));
}

void write_indexed_png(const std::filesystem::path& path, const GrayImage& img,
                       const std::vector<std::array<std::uint8_t, 3>>& palette) {
  write_file(path, encode_png(img, 3, &palette));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

GrayImage decode_png8(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const auto corrupt = [&name](const std::string& why) {
    return CorruptDatasetError("png '" + name + "': " + why);
  };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw corrupt("bad signature");
  std::size_t pos = 8;
  int w = 0, h = 0, color_type = -1;
  std::vector<std::uint8_t> idat;
  bool saw_end = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw corrupt("truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    const auto crc_expect = get_u32be(bytes.data() + pos + 8 + len);
    const auto crc_actual =
        static_cast<std::uint32_t>(crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(4 + len)));
    if (crc_expect != crc_actual) throw corrupt("chunk crc mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw corrupt("bad IHDR");
      w = static_cast<int>(get_u32be(data));
      h = static_cast<int>(get_u32be(data + 4));
      const int bit_depth = data[8];
      color_type = data[9];
      if (bit_depth != 8 || (color_type != 0 && color_type != 3))
        throw corrupt("unsupported bit depth / color type");
      if (data[12] != 0) throw corrupt("interlaced images unsupported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_end = true;
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0) throw corrupt("missing IHDR");
  if (!saw_end) throw corrupt("missing IEND (truncated file)");

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (w + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size()) throw corrupt("idat inflate failed");

  GrayImage img;
  img.w = w;
  img.h = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  std::vector<std::uint8_t> prev(static_cast<std::size_t>(w), 0);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (w + 1)];
    const std::uint8_t* line = raw.data() + static_cast<std::size_t>(y) * (w + 1) + 1;
    std::uint8_t* out = img.pixels.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const int a = x > 0 ? out[x - 1] : 0;
      const int b = prev[static_cast<std::size_t>(x)];
      const int c = x > 0 ? prev[static_cast<std::size_t>(x - 1)] : 0;
      int v = line[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw corrupt("unknown scanline filter");
      }
      out[x] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::copy(out, out + w, prev.begin());
  }
  return img;
}

GrayImage read_png8(const std::filesystem::path& path) {
  return decode_png8(read_file_bytes(path), path.string());
}

}  // namespace vmfnet
