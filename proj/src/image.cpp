#include "hfmf/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hfmf/errors.hpp"

namespace hfmf {

double iou(const Box& a, const Box& b) {
  const int ix0 = std::max(a.x, b.x), iy0 = std::max(a.y, b.y);
  const int ix1 = std::min(a.x + a.w, b.x + b.w), iy1 = std::min(a.y + a.h, b.y + b.h);
  const int inter = std::max(0, ix1 - ix0) * std::max(0, iy1 - iy0);
  const int uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

Tensor luminance(const Tensor& image) {
  if (image.rank() == 2) return image.detach();
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw DimensionError("luminance: expected [3xHxW] or [1xHxW], got " +
                         shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2), p = h * w;
  Tensor out({h, w});
  auto o = out.mutable_data();
  if (image.dim(0) == 1) {
    std::copy(image.data().begin(), image.data().end(), o.begin());
    return out;
  }
  for (std::size_t i = 0; i < p; ++i)
    o[i] = 0.299 * image[i] + 0.587 * image[p + i] + 0.114 * image[2 * p + i];
  return out;
}

Tensor crop(const Tensor& image, const Box& box) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (!box.within(static_cast<int>(w), static_cast<int>(h)))
    throw DimensionError("crop: box outside image " + shape_str(image.shape()));
  const auto bw = static_cast<std::size_t>(box.w), bh = static_cast<std::size_t>(box.h);
  Tensor out({c, bh, bw});
  auto o = out.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < bh; ++y)
      for (std::size_t x = 0; x < bw; ++x)
        o[(ch * bh + y) * bw + x] =
            image[(ch * h + y + static_cast<std::size_t>(box.y)) * w + x +
                  static_cast<std::size_t>(box.x)];
  return out;
}

namespace {

double sample_plane(const double* plane, std::size_t h, std::size_t w, double y,
                    double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace

double bilinear_at(const Tensor& map, double y, double x) {
  if (map.rank() != 2) throw DimensionError("bilinear_at: expected [HxW]");
  return sample_plane(map.data().data(), map.dim(0), map.dim(1), y, x);
}

Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  const bool planar = image.rank() == 2;
  if (!planar && image.rank() != 3)
    throw DimensionError("bilinear_resize: expected rank 2 or 3, got " +
                         shape_str(image.shape()));
  const std::size_t c = planar ? 1 : image.dim(0);
  const std::size_t h = image.dim(planar ? 0 : 1), w = image.dim(planar ? 1 : 2);
  Tensor out(planar ? Shape{out_h, out_w} : Shape{c, out_h, out_w});
  auto o = out.mutable_data();
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = image.data().data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        o[(ch * out_h + y) * out_w + x] =
            sample_plane(plane, h, w, (static_cast<double>(y) + 0.5) * sy - 0.5,
                         (static_cast<double>(x) + 0.5) * sx - 0.5);
  }
  return out;
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("malformed PNM header in " + path.string() + ": '" + tok + "'");
  }
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6")
    throw FormatError("not a binary PGM/PPM file: " + path.string());
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t w = parse_dim(next_token(in), path);
  const std::size_t h = parse_dim(next_token(in), path);
  const std::size_t maxval = parse_dim(next_token(in), path);
  if (maxval > 65535) throw FormatError("bad maxval in " + path.string());
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * channels * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw FormatError("truncated pixel data in " + path.string());
  Tensor out({channels, h, w});
  auto o = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = ((y * w + x) * channels + c) * bytes_per;
        const unsigned v = bytes_per == 2 ? (raw[idx] << 8) | raw[idx + 1] : raw[idx];
        o[(c * h + y) * w + x] = std::min(1.0, v * inv);
      }
  return out;
}

void write_pgm_bytes(const std::filesystem::path& path, std::size_t width,
                     std::size_t height, const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const bool planar = image.rank() == 2;
  const std::size_t c = planar ? 1 : image.dim(0);
  if (c != 1 && c != 3)
    throw DimensionError("write_pnm: need 1 or 3 channels, got " +
                         shape_str(image.shape()));
  const std::size_t h = image.dim(planar ? 0 : 1), w = image.dim(planar ? 1 : 2);
  std::vector<std::uint8_t> bytes(w * h * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        bytes[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  if (c == 1) {
    write_pgm_bytes(path, w, h, bytes);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace hfmf
