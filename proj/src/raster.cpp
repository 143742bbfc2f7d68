#include "gtforge/raster.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace gtforge {

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const ImageF& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "Pf\n" << image.width() << ' ' << image.height() << "\n-1\n";
  std::vector<std::uint32_t> row(static_cast<std::size_t>(image.width()));
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(image(x, y));
      if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
      row[static_cast<std::size_t>(x)] = bits;
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(std::uint32_t)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

ImageF read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  auto read_token = [&](const char* what) {
    std::string token;
    if (!(in >> token)) throw FormatError("PFM: missing " + std::string(what) + " in " + path.string());
    return token;
  };

  const std::string magic = read_token("magic");
  if (magic != "Pf") {
    if (magic == "PF") throw UnsupportedFormat("PFM: colour PFM not supported: " + path.string());
    throw FormatError("PFM: bad magic in " + path.string());
  }
  int width = 0;
  int height = 0;
  double scale = 0.0;
  try {
    width = std::stoi(read_token("width"));
    height = std::stoi(read_token("height"));
    scale = std::stod(read_token("scale"));
  } catch (const std::logic_error&) {
    throw FormatError("PFM: malformed header in " + path.string());
  }
  if (width < 0 || height < 0 || scale == 0.0) throw FormatError("PFM: invalid header values in " + path.string());
  // exactly one whitespace byte separates the header from the payload
  in.get();

  const bool little = scale < 0.0;
  const bool swap = little != (std::endian::native == std::endian::little);

  ImageF image(width, height);
  std::vector<std::uint32_t> row(static_cast<std::size_t>(width));
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(std::uint32_t)));
    if (in.gcount() != static_cast<std::streamsize>(row.size() * sizeof(std::uint32_t)))
      throw FormatError("PFM: truncated payload in " + path.string());
    for (int x = 0; x < width; ++x) {
      std::uint32_t bits = row[static_cast<std::size_t>(x)];
      if (swap) bits = byteswap32(bits);
      image(x, y) = std::bit_cast<float>(bits);
    }
  }
  return image;
}

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;  // interleaved
};

DecodedPng decode_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path.string());

  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(g.png))) throw FormatError("corrupt PNG: " + path.string());

  png_init_io(g.png, file.get());
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);

  const auto color = png_get_color_type(g.png, g.info);
  const auto depth = png_get_bit_depth(g.png, g.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_strip_alpha(g.png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(g.png);
  png_read_update_info(g.png, g.info);

  DecodedPng out;
  out.width = static_cast<int>(png_get_image_width(g.png, g.info));
  out.height = static_cast<int>(png_get_image_height(g.png, g.info));
  out.channels = png_get_channels(g.png, g.info);
  out.bit_depth = png_get_bit_depth(g.png, g.info);

  const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(g.png, rows.data());

  const std::size_t n = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * static_cast<std::size_t>(out.channels);
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (int y = 0; y < out.height; ++y) {
      const std::size_t per_row = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.channels);
      std::memcpy(out.samples.data() + per_row * static_cast<std::size_t>(y), rows[static_cast<std::size_t>(y)], per_row * 2);
    }
  } else {
    for (int y = 0; y < out.height; ++y) {
      const std::size_t per_row = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.channels);
      for (std::size_t i = 0; i < per_row; ++i) out.samples[per_row * static_cast<std::size_t>(y) + i] = rows[static_cast<std::size_t>(y)][i];
    }
  }
  return out;
}

void encode_png(const std::filesystem::path& path, int width, int height, int bit_depth,
                const std::vector<png_bytep>& rows) {
  FilePtr file = open_file(path, "wb");
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("png_create_write_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(g.png))) throw IoError("PNG encoding failed: " + path.string());

  png_init_io(g.png, file.get());
  png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(g.png);
  png_write_image(g.png, const_cast<png_bytepp>(rows.data()));
  png_write_end(g.png, nullptr);
}

}  // namespace

ImageF read_png_gray(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path);
  ImageF image(png.width, png.height);
  const auto c = static_cast<std::size_t>(png.channels);
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * static_cast<std::size_t>(png.width) + static_cast<std::size_t>(x)) * c;
      float v;
      if (c >= 3) {
        v = 0.299f * png.samples[base] + 0.587f * png.samples[base + 1] + 0.114f * png.samples[base + 2];
      } else {
        v = static_cast<float>(png.samples[base]);
      }
      image(x, y) = v;
    }
  }
  return image;
}

Image<std::uint16_t> read_png16(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path);
  if (png.channels != 1) throw FormatError("expected single-channel PNG: " + path.string());
  Image<std::uint16_t> image(png.width, png.height);
  std::copy(png.samples.begin(), png.samples.end(), image.data().begin());
  return image;
}

void write_png8(const std::filesystem::path& path, const ImageF& image) {
  std::vector<unsigned char> buffer(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = image.data()[i];
    buffer[i] = static_cast<unsigned char>(std::clamp(std::lround(std::isfinite(v) ? v : 0.0f), 0L, 255L));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  for (int y = 0; y < image.height(); ++y)
    rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width());
  encode_png(path, image.width(), image.height(), 8, rows);
}

void write_png16(const std::filesystem::path& path, const Image<std::uint16_t>& image) {
  std::vector<std::uint16_t> buffer = image.data();
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
  for (int y = 0; y < image.height(); ++y)
    rows[static_cast<std::size_t>(y)] =
        reinterpret_cast<png_bytep>(buffer.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width()));
  encode_png(path, image.width(), image.height(), 16, rows);
}

}  // namespace gtforge
