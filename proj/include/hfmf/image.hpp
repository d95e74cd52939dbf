#pragma once
// Image helpers on [C x H x W] tensors in [0, 1]: boxes, crops, bilinear
// resampling and binary PGM/PPM codecs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hfmf/tensor.hpp"

namespace hfmf {

/// Axis-aligned pixel box, top-left (x, y), size w x h.
struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int area() const { return w * h; }
  bool contains(int px, int py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool within(int width, int height) const {
    return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= width &&
           y + h <= height;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

/// 0.299 R + 0.587 G + 0.114 B; single-channel input is returned as [H x W].
Tensor luminance(const Tensor& image);

/// Copy of `box` from a [C x H x W] tensor (no gradient).
Tensor crop(const Tensor& image, const Box& box);

/// Bilinear resampling of [C x H x W] (or [H x W]) with half-pixel centres and
/// edge clamping.
Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Bilinear sample of an [H x W] map at fractional coordinates where integer
/// coordinates are pixel centres; clamps at the border.
double bilinear_at(const Tensor& map, double y, double x);

/// Decodes binary PGM (P5) or PPM (P6); returns [1 x H x W] or [3 x H x W]
/// in [0, 1]. Throws FormatError naming the file.
Tensor read_pnm(const std::filesystem::path& path);

/// Writes [3 x H x W] as P6 (or [1 x H x W] / [H x W] as P5), quantising with
/// round-to-nearest. Throws IoError naming the file.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Raw 8-bit P5 writer.
void write_pgm_bytes(const std::filesystem::path& path, std::size_t width,
                     std::size_t height, const std::vector<std::uint8_t>& pixels);

}  // namespace hfmf
