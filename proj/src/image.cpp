#include "pdseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace pdseg {

Image resize_bilinear(const Image& src, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("resize to empty extent");
  Image out(src.channels, height, width);
  auto axis = [](int in, int out_n, int o, int& i0, int& i1, float& f) {
    double s = (o + 0.5) * static_cast<double>(in) / out_n - 0.5;
    if (s < 0) s = 0;
    i0 = std::min(static_cast<int>(std::floor(s)), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    f = static_cast<float>(s - i0);
  };
  for (int y = 0; y < height; ++y) {
    int y0, y1;
    float fy;
    axis(src.height, height, y, y0, y1, fy);
    for (int x = 0; x < width; ++x) {
      int x0, x1;
      float fx;
      axis(src.width, width, x, x0, x1, fx);
      for (int c = 0; c < src.channels; ++c) {
        const float top = (1 - fx) * src.at(c, y0, x0) + fx * src.at(c, y0, x1);
        const float bot = (1 - fx) * src.at(c, y1, x0) + fx * src.at(c, y1, x1);
        out.at(c, y, x) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& src, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("resize to empty extent");
  LabelMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * src.height / height), src.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * src.width / width), src.width - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out(src.channels, src.height, src.width);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
  return out;
}

LabelMap flip_horizontal(const LabelMap& src) {
  LabelMap out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) out.at(y, x) = src.at(y, src.width - 1 - x);
  return out;
}

}  // namespace pdseg
