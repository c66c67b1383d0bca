#include "vesselkit/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <png.h>

namespace vk {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path);
}

// Reads whitespace-separated header tokens (PGM/PFM style), skipping comments.
struct HeaderReader {
  const std::string& bytes;
  std::size_t pos = 0;

  std::string token(const std::string& path) {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError(path + ": truncated header");
    return bytes.substr(start, pos - start);
  }

  int integer(const std::string& path) {
    const std::string t = token(path);
    try {
      return std::stoi(t);
    } catch (const std::logic_error&) {
      throw FormatError(path + ": malformed header value '" + t + "'");
    }
  }
};

std::string extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string e = path.substr(dot + 1);
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

void write_pfm(const std::string& path, const ImagePlane& image) {
  std::string out = "Pf\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
  // Rows are stored bottom to top.
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(image(y, x)));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
    }
  }
  write_file(path, out);
}

ImagePlane read_pfm(const std::string& path) {
  const std::string bytes = read_file(path);
  HeaderReader h{bytes};
  if (h.token(path) != "Pf") throw FormatError(path + ": not a single-channel PFM");
  const int w = h.integer(path);
  const int hgt = h.integer(path);
  double scale = 0.0;
  try {
    scale = std::stod(h.token(path));
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed PFM scale");
  }
  if (w <= 0 || hgt <= 0) throw FormatError(path + ": invalid PFM size");
  const std::size_t start = h.pos + 1;
  const std::size_t need = static_cast<std::size_t>(w) * hgt * 4;
  if (bytes.size() < start || bytes.size() - start != need) {
    throw FormatError(path + ": PFM payload length mismatch");
  }
  const bool little = scale < 0.0;
  ImagePlane img(hgt, w);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (int y = hgt - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint32_t u = 0;
      for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[little ? i : 3 - i]) << (8 * i);
      img(y, x) = std::bit_cast<float>(u);
      p += 4;
    }
  }
  return img;
}

void write_pgm(const std::string& path, const Grid<std::uint8_t>& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.data.data()), image.data.size());
  write_file(path, out);
}

Grid<std::uint8_t> read_pgm(const std::string& path) {
  const std::string bytes = read_file(path);
  HeaderReader h{bytes};
  if (h.token(path) != "P5") throw FormatError(path + ": not a binary PGM");
  const int w = h.integer(path);
  const int hgt = h.integer(path);
  const int maxval = h.integer(path);
  if (w <= 0 || hgt <= 0 || maxval != 255) throw FormatError(path + ": only 8-bit PGM is supported");
  const std::size_t start = h.pos + 1;
  if (bytes.size() < start || bytes.size() - start != static_cast<std::size_t>(w) * hgt) {
    throw FormatError(path + ": PGM payload length mismatch");
  }
  Grid<std::uint8_t> img(hgt, w);
  std::memcpy(img.data.data(), bytes.data() + start, img.data.size());
  return img;
}

void write_png(const std::string& path, const Grid<std::uint8_t>& gray) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(gray.width), static_cast<png_uint_32>(gray.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < gray.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&gray(y, 0)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ColorImage read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialization failed");
  }
  ColorImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw FormatError(path + ": unsupported PNG channel layout");
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y) {
    std::memcpy(img.data.data() + static_cast<std::size_t>(y) * img.width * img.channels, rows[y],
                static_cast<std::size_t>(img.width) * img.channels);
  }
  return img;
}

void write_mask_png(const std::string& path, const BinaryPlane& mask) {
  Grid<std::uint8_t> g(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) g.data[i] = mask.data[i] ? 255 : 0;
  write_png(path, g);
}

BinaryPlane read_mask_png(const std::string& path) {
  const ColorImage img = read_png(path);
  BinaryPlane m(img.height, img.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = img.data[i * img.channels] >= 128 ? 1 : 0;
  return m;
}

Grid<std::uint8_t> to_8bit(const ImagePlane& image) {
  Grid<std::uint8_t> g(image.height, image.width);
  for (std::size_t i = 0; i < image.size(); ++i) {
    g.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  }
  return g;
}

ImagePlane load_plane(const std::string& path) {
  const std::string ext = extension(path);
  if (ext == "pfm") return read_pfm(path);
  auto from_gray = [](const Grid<std::uint8_t>& g) {
    ImagePlane p(g.height, g.width);
    for (std::size_t i = 0; i < g.size(); ++i) p.data[i] = g.data[i] / 255.0;
    return p;
  };
  if (ext == "pgm") return from_gray(read_pgm(path));
  if (ext == "png") {
    ColorImage img = read_png(path);
    if (img.channels == 3) return extract_green(img);
    Grid<std::uint8_t> g(img.height, img.width);
    g.data = std::move(img.data);
    return from_gray(g);
  }
  throw FormatError(path + ": unsupported image extension (pfm, pgm, png)");
}

}  // namespace vk
