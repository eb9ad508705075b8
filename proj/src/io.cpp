#include "desplat/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace desplat {

namespace {

void put_u32le(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(v & 0xff);
  buf.push_back((v >> 8) & 0xff);
  buf.push_back((v >> 16) & 0xff);
  buf.push_back((v >> 24) & 0xff);
}

uint32_t get_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint32_t get_u32be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_u32be(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back((v >> 24) & 0xff);
  buf.push_back((v >> 16) & 0xff);
  buf.push_back((v >> 8) & 0xff);
  buf.push_back(v & 0xff);
}

std::vector<uint8_t> read_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  f.seekg(0, std::ios::end);
  std::vector<uint8_t> buf(static_cast<size_t>(f.tellg()));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("short read: " + path);
  return buf;
}

void write_binary(const std::string& path, const std::vector<uint8_t>& buf) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

void png_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_f32(const std::string& path, const Image& img) {
  std::vector<uint8_t> buf;
  buf.reserve(8 + img.size() * 4);
  put_u32le(buf, static_cast<uint32_t>(img.width));
  put_u32le(buf, static_cast<uint32_t>(img.height));
  for (double v : img.data) {
    float fv = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &fv, 4);
    put_u32le(buf, bits);
  }
  write_binary(path, buf);
}

Image read_f32(const std::string& path) {
  std::vector<uint8_t> buf = read_binary(path);
  if (buf.size() < 8) throw std::runtime_error("truncated f32 file: " + path);
  uint32_t w = get_u32le(buf.data());
  uint32_t h = get_u32le(buf.data() + 4);
  size_t n_samples = (buf.size() - 8) / 4;
  if (w == 0 || h == 0 || n_samples % (static_cast<size_t>(w) * h) != 0)
    throw std::runtime_error("bad f32 geometry: " + path);
  int channels = static_cast<int>(n_samples / (static_cast<size_t>(w) * h));
  Image img(static_cast<int>(w), static_cast<int>(h), channels);
  for (size_t i = 0; i < n_samples; ++i) {
    uint32_t bits = get_u32le(buf.data() + 8 + i * 4);
    float fv;
    std::memcpy(&fv, &bits, 4);
    img.data[i] = static_cast<double>(fv);
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::runtime_error("png writer supports 1 or 3 channels");
  const int w = img.width, h = img.height, c = img.channels;

  // Filter 0 scanlines.
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * c));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double v = std::clamp(img.at(x, y, ch), 0.0, 1.0);
        raw.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
      }
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("zlib compress failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(w));
  put_u32be(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                       // bit depth
  ihdr.push_back(c == 3 ? 2 : 0);          // color type
  ihdr.push_back(0);                       // compression
  ihdr.push_back(0);                       // filter
  ihdr.push_back(0);                       // interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", comp);
  png_chunk(out, "IEND", {});
  write_binary(path, out);
}

Image read_png(const std::string& path) {
  std::vector<uint8_t> buf = read_binary(path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw std::runtime_error("not a png: " + path);

  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    uint32_t len = get_u32be(buf.data() + pos);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const uint8_t* payload = buf.data() + pos + 8;
    if (pos + 12 + len > buf.size()) throw std::runtime_error("truncated png: " + path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = static_cast<int>(get_u32be(payload));
      h = static_cast<int>(get_u32be(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || interlace != 0)
        throw std::runtime_error("unsupported png layout: " + path);
      if (color == 0) channels = 1;
      else if (color == 2) channels = 3;
      else throw std::runtime_error("unsupported png color type: " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || channels == 0) throw std::runtime_error("bad png header: " + path);

  size_t stride = static_cast<size_t>(w) * channels;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("zlib inflate failed: " + path);

  // Undo per-row filters.
  std::vector<uint8_t> pix(static_cast<size_t>(h) * stride, 0);
  int bpp = channels;
  for (int y = 0; y < h; ++y) {
    uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
    uint8_t* dst = pix.data() + static_cast<size_t>(y) * stride;
    const uint8_t* up = y > 0 ? pix.data() + static_cast<size_t>(y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
      int b = up ? up[i] : 0;
      int cc = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, cc); break;
        default: throw std::runtime_error("unsupported png filter: " + path);
      }
      dst[i] = static_cast<uint8_t>(v & 0xff);
    }
  }

  Image img(w, h, channels);
  for (size_t i = 0; i < img.size(); ++i) img.data[i] = pix[i] / 255.0;
  return img;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("short write: " + path);
}

}  // namespace desplat
