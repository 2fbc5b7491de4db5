#pragma once

#include <cstdint>
#include <vector>

#include "pdseg/tensor.hpp"

namespace pdseg {

/// Planar float image, C×H×W row-major.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
};

/// H×W class ids; 255 marks ignored pixels.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

/// 1×C×H×W tensor view of an image (copies).
template <typename T>
Tensor<T> to_tensor(const Image& image) {
  std::vector<T> v(image.data.begin(), image.data.end());
  return Tensor<T>::from({1, image.channels, image.height, image.width}, std::move(v));
}

template <typename T>
Image to_image(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(0) != 1) throw DimensionError("to_image expects a 1×C×H×W tensor");
  Image img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)));
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(t.data()[i]);
  return img;
}

/// Bilinear (half-pixel centers) resampling of every channel.
Image resize_bilinear(const Image& src, int height, int width);
/// Nearest-neighbour resampling of a label map.
LabelMap resize_nearest(const LabelMap& src, int height, int width);
Image flip_horizontal(const Image& src);
LabelMap flip_horizontal(const LabelMap& src);

}  // namespace pdseg
