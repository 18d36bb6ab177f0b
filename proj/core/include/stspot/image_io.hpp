#ifndef STSPOT_IMAGE_IO_HPP_
#define STSPOT_IMAGE_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace stspot {

/// 8-bit-quantized RGB image held as planar doubles in [0,1], layout (3,H,W).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static Image create(int h, int w, double fill = 0.0) {
    Image im;
    im.height = h;
    im.width = w;
    im.data.assign(static_cast<std::size_t>(3) * h * w, fill);
    return im;
  }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  /// Snap every value onto the 8-bit grid k/255 so PPM round-trips exactly.
  void quantize();
};

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

/// Grayscale (values in [0,1], row-major H*W) as binary PGM.
void write_pgm(const std::string& path, int h, int w,
               const std::vector<double>& gray);

}  // namespace stspot

#endif  // STSPOT_IMAGE_IO_HPP_
