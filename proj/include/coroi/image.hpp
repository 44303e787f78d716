#pragma once

#include <string>

#include "coroi/tensor.hpp"

namespace coroi {

// Half-open pixel rectangle [r0,r1) x [c0,c1).
struct PixelRect {
  int64_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;
  int64_t height() const { return r1 - r0; }
  int64_t width() const { return c1 - c0; }
  bool operator==(const PixelRect&) const = default;
};

// Raster image with values in [0,1]. Pixels are plain data and never
// participate in the gradient tape.
struct ImageTensor {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;
  Tensor pixels;  // [h, w, c]

  static ImageTensor zeros(int64_t h, int64_t w, int64_t c, DType dt);
};

// Flat binary raster: 12-byte header [u32 h | u32 w | u32 c], then u8
// values row-major, scaled to [0,1] on load.
void write_raster(const std::string& path, const ImageTensor& img);
ImageTensor read_raster(const std::string& path, DType dt);
std::string raster_bytes(const ImageTensor& img);
ImageTensor raster_from_bytes(const std::string& buf, size_t& pos, DType dt);

// Bilinear upsample by integer factor lambda >= 2, corner-aligned.
ImageTensor upsample_bilinear(const ImageTensor& img, int64_t lambda);

// Area-average downsample to (out_h, out_w); exact block means when the
// ratio is an integer, fractional coverage weights otherwise.
ImageTensor downsample_area(const ImageTensor& img, int64_t out_h, int64_t out_w);

ImageTensor crop(const ImageTensor& img, const PixelRect& rect);

}  // namespace coroi
