#include "tafnet/image_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tafnet {

namespace {

uint8_t quantize(double v) {
  const double clamped = std::min(std::max(v, 0.0), 1.0);
  return uint8_t(std::lround(clamped * 255.0));
}

void write_pnm(const Tensor4& img, int channels, const char* magic,
               const std::filesystem::path& path) {
  check_shape(img.shape.n == 1 && img.shape.c == channels,
              std::string("write_pnm: expected (1,") + std::to_string(channels) +
                  ",h,w), got " + img.shape.str());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw std::runtime_error("image: cannot open '" + path.string() + "' for writing");
  }
  f << magic << "\n" << img.shape.w << " " << img.shape.h << "\n255\n";
  std::vector<uint8_t> bytes(size_t(img.shape.h) * img.shape.w * channels);
  size_t i = 0;
  for (int y = 0; y < img.shape.h; ++y) {
    for (int x = 0; x < img.shape.w; ++x) {
      for (int c = 0; c < channels; ++c) bytes[i++] = quantize(img.at(0, c, y, x));
    }
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) {
    throw std::runtime_error("image: write failed for '" + path.string() + "'");
  }
}

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(ch));
  }
  if (tok.empty()) {
    throw std::runtime_error("image '" + path + "': truncated header");
  }
  return tok;
}

Tensor4 read_pnm(const std::filesystem::path& path, int channels, const char* magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("image: cannot open '" + path.string() + "'");
  }
  const std::string p = path.string();
  if (next_token(f, p) != magic) {
    throw std::runtime_error("image '" + p + "': expected " + magic + " format");
  }
  const int w = std::stoi(next_token(f, p));
  const int h = std::stoi(next_token(f, p));
  const int maxval = std::stoi(next_token(f, p));
  if (w < 1 || h < 1) {
    throw std::runtime_error("image '" + p + "': bad dimensions");
  }
  if (maxval != 255) {
    throw std::runtime_error("image '" + p + "': only maxval 255 is supported");
  }
  // header ends with exactly one whitespace byte, already consumed by next_token

  std::vector<uint8_t> bytes(size_t(h) * w * channels);
  f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (size_t(f.gcount()) != bytes.size()) {
    throw std::runtime_error("image '" + p + "': truncated pixel data");
  }
  Tensor4 img(Shape4{1, channels, h, w});
  size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = bytes[i++] / 255.0;
    }
  }
  return img;
}

}  // namespace

void write_ppm(const Tensor4& rgb, const std::filesystem::path& path) {
  write_pnm(rgb, 3, "P6", path);
}

void write_pgm(const Tensor4& gray, const std::filesystem::path& path) {
  write_pnm(gray, 1, "P5", path);
}

Tensor4 read_ppm(const std::filesystem::path& path) { return read_pnm(path, 3, "P6"); }

Tensor4 read_pgm(const std::filesystem::path& path) { return read_pnm(path, 1, "P5"); }

}  // namespace tafnet
