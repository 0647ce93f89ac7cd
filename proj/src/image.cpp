#include "dualuv/image.hpp"

#include "dualuv/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dualuv {

FeatureMap::FeatureMap(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) throw Error("feature map dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

std::uint8_t to_byte(double unit_value) {
  const double v = std::clamp(unit_value, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(v));
}

namespace {

struct NetpbmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
};

// Reads tokens while skipping '#' comments; leaves the stream positioned on
// the single whitespace byte that ends the header.
NetpbmHeader read_header(std::istream& in, const std::string& what) {
  NetpbmHeader h;
  auto token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  h.magic = token();
  try {
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    h.maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError(what + ": malformed netpbm header");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval != 255) {
    throw IoError(what + ": unsupported netpbm geometry or maxval");
  }
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  const NetpbmHeader h = read_header(in, path.string());
  if (h.magic != "P5") throw IoError(path.string() + ": expected P5");
  GrayImage img(h.width, h.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

FeatureMap read_ppm(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  const NetpbmHeader h = read_header(in, path.string());
  if (h.magic != "P6") throw IoError(path.string() + ": expected P6");
  std::string raw(static_cast<std::size_t>(h.width) * h.height * 3, '\0');
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  FeatureMap img(h.height, h.width, 3);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.data()[i] = static_cast<unsigned char>(raw[i]) / 255.0;
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb) {
  if (rgb.channels() < 3) throw Error("write_ppm needs at least 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
  std::string raw;
  raw.reserve(static_cast<std::size_t>(rgb.width()) * rgb.height() * 3);
  for (int r = 0; r < rgb.height(); ++r)
    for (int c = 0; c < rgb.width(); ++c)
      for (int ch = 0; ch < 3; ++ch) raw.push_back(static_cast<char>(to_byte(rgb.at(r, c, ch))));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

GrayImage mask_to_pgm(std::span<const std::uint8_t> mask, int width, int height) {
  GrayImage img(width, height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
  return img;
}

}  // namespace dualuv
