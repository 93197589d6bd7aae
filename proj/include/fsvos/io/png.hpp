#pragma once

// Minimal PNG reader/writer backed by zlib. Writes 8-bit grayscale / RGB,
// non-interlaced, filter 0. Reads 8-bit non-interlaced PNGs of color types
// 0 (gray), 2 (RGB), 3 (palette), 4 (gray+alpha), 6 (RGBA) with all five
// scanline filters. Paletted images are returned as raw indices so that
// id-valued masks survive decoding.

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "fsvos/util/fs.hpp"

namespace fsvos::png {

struct ImageU8 {
  int h = 0, w = 0, c = 0;
  std::vector<uint8_t> pix;  // row-major, interleaved channels

  uint8_t& at(int y, int x, int ch = 0) { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
  uint8_t at(int y, int x, int ch = 0) const { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
  bool empty() const { return pix.empty(); }
};

using Palette = std::vector<std::array<uint8_t, 3>>;

struct Decoded {
  ImageU8 image;                  // channels as stored (palette -> 1 channel of indices)
  std::optional<Palette> palette;
};

struct HeaderInfo {
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
};

namespace detail {

inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const uint8_t* data, size_t n) {
  put_u32be(out, static_cast<uint32_t>(n));
  size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data, data + n);
  uint32_t crc = crc32(0, out.data() + type_pos, static_cast<uInt>(4 + n));
  put_u32be(out, crc);
}

inline const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline int channels_for_color_type(int ct) {
  switch (ct) {
    case 0: return 1;
    case 2: return 3;
    case 3: return 1;  // indices
    case 4: return 2;
    case 6: return 4;
    default: return 0;
  }
}

inline uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  int p = int(a) + int(b) - int(c);
  int pa = std::abs(p - int(a)), pb = std::abs(p - int(b)), pc = std::abs(p - int(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline std::vector<uint8_t> encode(const ImageU8& img) {
  if (img.c != 1 && img.c != 3)
    throw std::runtime_error("png::encode: only 1- or 3-channel images supported");
  if (img.w <= 0 || img.h <= 0 || img.pix.size() != size_t(img.w) * img.h * img.c)
    throw std::runtime_error("png::encode: malformed image buffer");

  std::vector<uint8_t> out(detail::kSignature, detail::kSignature + 8);

  uint8_t ihdr[13];
  ihdr[0] = uint8_t(img.w >> 24); ihdr[1] = uint8_t(img.w >> 16);
  ihdr[2] = uint8_t(img.w >> 8);  ihdr[3] = uint8_t(img.w);
  ihdr[4] = uint8_t(img.h >> 24); ihdr[5] = uint8_t(img.h >> 16);
  ihdr[6] = uint8_t(img.h >> 8);  ihdr[7] = uint8_t(img.h);
  ihdr[8] = 8;                                  // bit depth
  ihdr[9] = (img.c == 1) ? 0 : 2;               // gray or RGB
  ihdr[10] = 0; ihdr[11] = 0; ihdr[12] = 0;     // deflate, adaptive, no interlace
  detail::append_chunk(out, "IHDR", ihdr, 13);

  const size_t row = size_t(img.w) * img.c;
  std::vector<uint8_t> raw(img.h * (row + 1));
  for (int y = 0; y < img.h; ++y) {
    raw[y * (row + 1)] = 0;  // filter: None
    std::memcpy(&raw[y * (row + 1) + 1], &img.pix[y * row], row);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png::encode: deflate failed");
  detail::append_chunk(out, "IDAT", z.data(), bound);
  detail::append_chunk(out, "IEND", nullptr, 0);
  return out;
}

inline void write(const fs::path& path, const ImageU8& img) {
  auto bytes = encode(img);
  write_file_bytes(path, bytes.data(), bytes.size());
}

// Parses signature + IHDR only; cheap existence/shape validation.
inline HeaderInfo read_header(const std::vector<uint8_t>& bytes, const std::string& what = "") {
  if (bytes.size() < 33 || std::memcmp(bytes.data(), detail::kSignature, 8) != 0)
    throw std::runtime_error("png: not a PNG file: " + what);
  if (std::memcmp(bytes.data() + 12, "IHDR", 4) != 0)
    throw std::runtime_error("png: missing IHDR: " + what);
  HeaderInfo h;
  h.width = static_cast<int>(detail::get_u32be(bytes.data() + 16));
  h.height = static_cast<int>(detail::get_u32be(bytes.data() + 20));
  h.bit_depth = bytes[24];
  h.color_type = bytes[25];
  h.interlace = bytes[28];
  if (h.width <= 0 || h.height <= 0)
    throw std::runtime_error("png: bad dimensions: " + what);
  return h;
}

inline HeaderInfo read_header_file(const fs::path& path) {
  return read_header(read_file_bytes(path), path.string());
}

inline Decoded decode(const std::vector<uint8_t>& bytes, const std::string& what = "") {
  HeaderInfo h = read_header(bytes, what);
  if (h.bit_depth != 8)
    throw std::runtime_error("png: only 8-bit depth supported: " + what);
  if (h.interlace != 0)
    throw std::runtime_error("png: interlaced PNG not supported: " + what);
  int ch = detail::channels_for_color_type(h.color_type);
  if (ch == 0)
    throw std::runtime_error("png: unsupported color type: " + what);

  std::optional<Palette> palette;
  std::vector<uint8_t> zdata;
  size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    uint32_t len = detail::get_u32be(&bytes[pos]);
    if (pos + 12 + len > bytes.size())
      throw std::runtime_error("png: truncated chunk: " + what);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* data = &bytes[pos + 8];
    uint32_t crc_stored = detail::get_u32be(&bytes[pos + 8 + len]);
    uint32_t crc_actual = crc32(0, &bytes[pos + 4], 4 + len);
    if (crc_stored != crc_actual)
      throw std::runtime_error("png: CRC mismatch: " + what);
    if (std::memcmp(type, "IDAT", 4) == 0) {
      zdata.insert(zdata.end(), data, data + len);
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      if (len % 3 != 0) throw std::runtime_error("png: bad PLTE: " + what);
      Palette p(len / 3);
      for (size_t i = 0; i < p.size(); ++i)
        p[i] = {data[3 * i], data[3 * i + 1], data[3 * i + 2]};
      palette = std::move(p);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (zdata.empty()) throw std::runtime_error("png: no IDAT data: " + what);
  if (h.color_type == 3 && !palette)
    throw std::runtime_error("png: paletted image without PLTE: " + what);

  const size_t row = size_t(h.width) * ch;
  std::vector<uint8_t> raw(size_t(h.height) * (row + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  uLong src_len = static_cast<uLong>(zdata.size());
  int rc = uncompress2(raw.data(), &raw_len, zdata.data(), &src_len);
  if (rc != Z_OK || raw_len != raw.size())
    throw std::runtime_error("png: inflate failed: " + what);

  Decoded d;
  d.image.h = h.height;
  d.image.w = h.width;
  d.image.c = ch;
  d.image.pix.resize(size_t(h.height) * row);
  d.palette = std::move(palette);

  const int bpp = ch;  // bytes per pixel at 8-bit depth
  std::vector<uint8_t> prev(row, 0);
  for (int y = 0; y < h.height; ++y) {
    uint8_t filt = raw[y * (row + 1)];
    const uint8_t* src = &raw[y * (row + 1) + 1];
    uint8_t* dst = &d.image.pix[y * row];
    switch (filt) {
      case 0:
        std::memcpy(dst, src, row);
        break;
      case 1:
        for (size_t i = 0; i < row; ++i)
          dst[i] = uint8_t(src[i] + (i >= size_t(bpp) ? dst[i - bpp] : 0));
        break;
      case 2:
        for (size_t i = 0; i < row; ++i) dst[i] = uint8_t(src[i] + prev[i]);
        break;
      case 3:
        for (size_t i = 0; i < row; ++i) {
          int left = i >= size_t(bpp) ? dst[i - bpp] : 0;
          dst[i] = uint8_t(src[i] + ((left + prev[i]) >> 1));
        }
        break;
      case 4:
        for (size_t i = 0; i < row; ++i) {
          uint8_t a = i >= size_t(bpp) ? dst[i - bpp] : 0;
          uint8_t c = i >= size_t(bpp) ? prev[i - bpp] : 0;
          dst[i] = uint8_t(src[i] + detail::paeth(a, prev[i], c));
        }
        break;
      default:
        throw std::runtime_error("png: unknown filter type: " + what);
    }
    std::memcpy(prev.data(), dst, row);
  }
  return d;
}

inline Decoded read(const fs::path& path) {
  return decode(read_file_bytes(path), path.string());
}

// Expands palette / drops alpha so callers always get 3 channels.
inline ImageU8 to_rgb(const Decoded& d) {
  const ImageU8& im = d.image;
  ImageU8 out;
  out.h = im.h; out.w = im.w; out.c = 3;
  out.pix.resize(size_t(im.h) * im.w * 3);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      uint8_t r, g, b;
      if (im.c == 1 && d.palette) {
        uint8_t idx = im.at(y, x);
        if (idx >= d.palette->size()) throw std::runtime_error("png: palette index out of range");
        auto& e = (*d.palette)[idx];
        r = e[0]; g = e[1]; b = e[2];
      } else if (im.c == 1) {
        r = g = b = im.at(y, x);
      } else if (im.c == 2) {
        r = g = b = im.at(y, x, 0);
      } else {
        r = im.at(y, x, 0); g = im.at(y, x, 1); b = im.at(y, x, 2);
      }
      out.at(y, x, 0) = r; out.at(y, x, 1) = g; out.at(y, x, 2) = b;
    }
  return out;
}

// Single-channel view for id-valued masks. Palette indices pass through
// untouched; RGB masks must be monochrome per pixel.
inline ImageU8 to_gray_ids(const Decoded& d, const std::string& what = "") {
  const ImageU8& im = d.image;
  if (im.c == 1) return im;
  ImageU8 out;
  out.h = im.h; out.w = im.w; out.c = 1;
  out.pix.resize(size_t(im.h) * im.w);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      uint8_t v = im.at(y, x, 0);
      if (im.c >= 3 && (im.at(y, x, 1) != v || im.at(y, x, 2) != v))
        throw std::runtime_error("png: mask is not monochrome: " + what);
      out.at(y, x) = v;
    }
  return out;
}

}  // namespace fsvos::png
