#include "coroi/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace coroi {

ImageTensor ImageTensor::zeros(int64_t h, int64_t w, int64_t c, DType dt) {
  if (h <= 0 || w <= 0 || (c != 1 && c != 3))
    throw DimError("image: extents must be positive with 1 or 3 channels");
  ImageTensor img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.pixels = Tensor::zeros({h, w, c}, dt);
  return img;
}

std::string raster_bytes(const ImageTensor& img) {
  std::string buf;
  auto put_u32 = [&buf](uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<uint32_t>(img.height));
  put_u32(static_cast<uint32_t>(img.width));
  put_u32(static_cast<uint32_t>(img.channels));
  int64_t n = img.height * img.width * img.channels;
  for (int64_t i = 0; i < n; ++i) {
    double v = img.pixels.at(i);
    v = std::clamp(v, 0.0, 1.0);
    buf.push_back(static_cast<char>(static_cast<uint8_t>(std::lround(v * 255.0))));
  }
  return buf;
}

ImageTensor raster_from_bytes(const std::string& buf, size_t& pos, DType dt) {
  auto get_u32 = [&buf, &pos](const char* what) {
    if (pos + 4 > buf.size())
      throw IoError(std::string("raster: truncated header field ") + what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  };
  uint32_t h = get_u32("h"), w = get_u32("w"), c = get_u32("c");
  if (h == 0 || w == 0 || (c != 1 && c != 3))
    throw IoError("raster: implausible header");
  size_t n = static_cast<size_t>(h) * w * c;
  if (pos + n > buf.size()) throw IoError("raster: truncated payload");
  ImageTensor img = ImageTensor::zeros(h, w, c, dt);
  for (size_t i = 0; i < n; ++i)
    img.pixels.set(static_cast<int64_t>(i),
                   static_cast<unsigned char>(buf[pos + i]) / 255.0);
  pos += n;
  return img;
}

void write_raster(const std::string& path, const ImageTensor& img) {
  std::string buf = raster_bytes(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("raster: cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("raster: write failed: " + path);
}

ImageTensor read_raster(const std::string& path, DType dt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("raster: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  size_t pos = 0;
  ImageTensor img = raster_from_bytes(buf, pos, dt);
  if (pos != buf.size()) throw IoError("raster: trailing bytes after payload");
  return img;
}

ImageTensor upsample_bilinear(const ImageTensor& img, int64_t lambda) {
  if (lambda < 2) throw ContractError("upsample_bilinear: lambda must be >= 2");
  int64_t oh = img.height * lambda, ow = img.width * lambda;
  ImageTensor out = ImageTensor::zeros(oh, ow, img.channels, img.pixels.dtype());
  int64_t C = img.channels;
  // corner-aligned: src = dst * (src_size-1)/(dst_size-1)
  double sy = oh > 1 ? static_cast<double>(img.height - 1) / (oh - 1) : 0.0;
  double sx = ow > 1 ? static_cast<double>(img.width - 1) / (ow - 1) : 0.0;
  for (int64_t y = 0; y < oh; ++y) {
    double fy = y * sy;
    int64_t y0 = static_cast<int64_t>(fy);
    int64_t y1 = std::min(y0 + 1, img.height - 1);
    double wy = fy - y0;
    for (int64_t x = 0; x < ow; ++x) {
      double fx = x * sx;
      int64_t x0 = static_cast<int64_t>(fx);
      int64_t x1 = std::min(x0 + 1, img.width - 1);
      double wx = fx - x0;
      for (int64_t ch = 0; ch < C; ++ch) {
        double v00 = img.pixels.at((y0 * img.width + x0) * C + ch);
        double v01 = img.pixels.at((y0 * img.width + x1) * C + ch);
        double v10 = img.pixels.at((y1 * img.width + x0) * C + ch);
        double v11 = img.pixels.at((y1 * img.width + x1) * C + ch);
        double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                   wy * ((1 - wx) * v10 + wx * v11);
        out.pixels.set((y * ow + x) * C + ch, v);
      }
    }
  }
  return out;
}

ImageTensor downsample_area(const ImageTensor& img, int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0 || out_h > img.height || out_w > img.width)
    throw DimError("downsample_area: bad target extents");
  ImageTensor out = ImageTensor::zeros(out_h, out_w, img.channels, img.pixels.dtype());
  int64_t C = img.channels;
  double ry = static_cast<double>(img.height) / out_h;
  double rx = static_cast<double>(img.width) / out_w;
  for (int64_t y = 0; y < out_h; ++y) {
    double sy0 = y * ry, sy1 = (y + 1) * ry;
    int64_t iy0 = static_cast<int64_t>(std::floor(sy0));
    int64_t iy1 = std::min(static_cast<int64_t>(std::ceil(sy1)), img.height);
    for (int64_t x = 0; x < out_w; ++x) {
      double sx0 = x * rx, sx1 = (x + 1) * rx;
      int64_t ix0 = static_cast<int64_t>(std::floor(sx0));
      int64_t ix1 = std::min(static_cast<int64_t>(std::ceil(sx1)), img.width);
      for (int64_t ch = 0; ch < C; ++ch) {
        double acc = 0, wsum = 0;
        for (int64_t yy = iy0; yy < iy1; ++yy) {
          double cy = std::min(sy1, static_cast<double>(yy + 1)) -
                      std::max(sy0, static_cast<double>(yy));
          for (int64_t xx = ix0; xx < ix1; ++xx) {
            double cx = std::min(sx1, static_cast<double>(xx + 1)) -
                        std::max(sx0, static_cast<double>(xx));
            double wgt = cy * cx;
            acc += wgt * img.pixels.at((yy * img.width + xx) * C + ch);
            wsum += wgt;
          }
        }
        out.pixels.set((y * out_w + x) * C + ch, acc / wsum);
      }
    }
  }
  return out;
}

ImageTensor crop(const ImageTensor& img, const PixelRect& rect) {
  if (rect.r0 < 0 || rect.c0 < 0 || rect.r1 > img.height || rect.c1 > img.width ||
      rect.height() <= 0 || rect.width() <= 0)
    throw ContractError("crop: rectangle out of bounds");
  ImageTensor out =
      ImageTensor::zeros(rect.height(), rect.width(), img.channels, img.pixels.dtype());
  int64_t C = img.channels;
  for (int64_t y = 0; y < rect.height(); ++y)
    for (int64_t x = 0; x < rect.width(); ++x)
      for (int64_t ch = 0; ch < C; ++ch)
        out.pixels.set((y * rect.width() + x) * C + ch,
                       img.pixels.at(((rect.r0 + y) * img.width + rect.c0 + x) * C + ch));
  return out;
}

}  // namespace coroi
