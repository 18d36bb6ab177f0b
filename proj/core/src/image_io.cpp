#include "stspot/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "stspot/common.hpp"

namespace stspot {

namespace {
int to_byte(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
}  // namespace

void Image::quantize() {
  for (auto& v : data) v = to_byte(v) / 255.0;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(to_byte(img.at(c, y, x)));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError("not a binary PPM (P6): " + path);
  auto next_token = [&]() -> long {
    // Skips whitespace and '#' comment lines.
    while (true) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    long v = -1;
    f >> v;
    return v;
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("unsupported PPM geometry in " + path);
  f.get();  // single whitespace after header
  Image img = Image::create(static_cast<int>(h), static_cast<int>(w));
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size()));
    if (!f) throw IoError("truncated PPM data in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

void write_pgm(const std::string& path, int h, int w,
               const std::vector<double>& gray) {
  if (gray.size() != static_cast<std::size_t>(h) * w)
    throw IoError("write_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i)
    buf[i] = static_cast<unsigned char>(to_byte(gray[i]));
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace stspot
