#include "hfmf/streams.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hfmf/errors.hpp"

namespace hfmf {

EdgeMap sobel(const Tensor& gray) {
  if (gray.rank() != 2 || gray.dim(0) < 3 || gray.dim(1) < 3)
    throw ContractError("sobel: need an [H x W] image with H, W >= 3, got " +
                        shape_str(gray.shape()));
  const std::size_t h = gray.dim(0), w = gray.dim(1);
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return gray[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  EdgeMap e{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  auto g = e.g.mutable_data(), gx = e.gx.mutable_data(), gy = e.gy.mutable_data();
  for (std::size_t yy = 0; yy < h; ++yy)
    for (std::size_t xx = 0; xx < w; ++xx) {
      const auto y = static_cast<std::ptrdiff_t>(yy), x = static_cast<std::ptrdiff_t>(xx);
      // differences first, so a constant neighbourhood gives exactly zero
      const double vx = (at(y - 1, x + 1) - at(y - 1, x - 1)) +
                        2.0 * (at(y, x + 1) - at(y, x - 1)) +
                        (at(y + 1, x + 1) - at(y + 1, x - 1));
      const double vy = (at(y + 1, x - 1) - at(y - 1, x - 1)) +
                        2.0 * (at(y + 1, x) - at(y - 1, x)) +
                        (at(y + 1, x + 1) - at(y - 1, x + 1));
      const std::size_t i = yy * w + xx;
      gx[i] = vx;
      gy[i] = vy;
      g[i] = std::sqrt(vx * vx + vy * vy);
    }
  return e;
}

RegionSet region_extract(const Tensor& image, const RegionOptions& options) {
  const Tensor lum = luminance(image);
  const int h = static_cast<int>(lum.dim(0)), w = static_cast<int>(lum.dim(1));
  const int win = options.window > 0 ? options.window : std::max(2, std::min(h, w) / 4);
  const int stride = options.stride > 0 ? options.stride : std::max(1, win / 2);
  if (win > h || win > w) throw ConfigurationError("region window larger than image");

  // Summed-area tables of x and x^2.
  std::vector<double> s1((h + 1) * (w + 1), 0.0), s2((h + 1) * (w + 1), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = lum[static_cast<std::size_t>(y * w + x)];
      const int i = (y + 1) * (w + 1) + x + 1;
      s1[i] = v + s1[i - 1] + s1[i - (w + 1)] - s1[i - (w + 1) - 1];
      s2[i] = v * v + s2[i - 1] + s2[i - (w + 1)] - s2[i - (w + 1) - 1];
    }
  auto box_sum = [&](const std::vector<double>& s, const Box& b) {
    auto idx = [&](int y, int x) { return y * (w + 1) + x; };
    return s[idx(b.y + b.h, b.x + b.w)] - s[idx(b.y, b.x + b.w)] -
           s[idx(b.y + b.h, b.x)] + s[idx(b.y, b.x)];
  };
  auto variance = [&](const Box& b) {
    const double n = b.area();
    const double m = box_sum(s1, b) / n;
    return std::max(0.0, box_sum(s2, b) / n - m * m);
  };

  std::vector<Box> candidates;
  for (int y = 0; y + win <= h; y += stride)
    for (int x = 0; x + win <= w; x += stride) candidates.push_back({x, y, win, win});
  std::vector<double> score(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) score[i] = variance(candidates[i]);

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  RegionSet rs;
  const auto [lo, hi] = std::minmax_element(score.begin(), score.end());
  const bool all_tied = *hi - *lo <= 1e-12;
  std::vector<Box> chosen;
  if (all_tied) {
    rs.primary_region = {w / 4, h / 4, w / 2, h / 2};
    rs.saliency_scores.push_back(variance(rs.primary_region));
  } else {
    rs.primary_region = candidates[order[0]];
    rs.saliency_scores.push_back(score[order[0]]);
    chosen.push_back(rs.primary_region);
  }
  std::vector<bool> used(candidates.size(), false);
  if (!all_tied) used[order[0]] = true;
  for (std::size_t pass = 0; pass < 2; ++pass)
    for (std::size_t idx : order) {
      if (static_cast<int>(rs.context_regions.size()) >= options.k_context) break;
      if (used[idx]) continue;
      const Box& b = candidates[idx];
      bool suppressed = false;
      if (pass == 0)
        for (const Box& c : chosen) suppressed = suppressed || iou(b, c) > options.nms_iou;
      if (suppressed) continue;
      used[idx] = true;
      chosen.push_back(b);
      rs.context_regions.push_back(b);
      rs.saliency_scores.push_back(score[idx]);
    }
  return rs;
}

StreamEncoder::StreamEncoder(std::size_t in_channels, std::size_t out_dim, Rng& rng)
    : c1_(in_channels, 16, 3, 2, 1, rng), c2_(16, 32, 3, 2, 1, rng), head_(32, out_dim, rng, 0.5) {}

Tensor StreamEncoder::operator()(const Tensor& x) const {
  return head_(global_avg_pool(relu(c2_(relu(c1_(x))))));
}

void StreamEncoder::collect(ParamList& out, const std::string& prefix) const {
  c1_.collect(out, prefix + ".conv1");
  c2_.collect(out, prefix + ".conv2");
  head_.collect(out, prefix + ".head");
}

std::string StreamMask::name() const {
  std::string s;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += n;
  };
  add(region, "region");
  add(sobel, "sobel");
  add(global, "global");
  return s.empty() ? "none" : s;
}

M2Model::M2Model(const ModelDims& dims, std::uint64_t seed, StreamMask mask)
    : dims_(dims), mask_(mask) {
  dims.validate();
  if (!mask.region && !mask.sobel && !mask.global)
    throw ConfigurationError("M2Model: at least one stream must be enabled");
  regions_.k_context = dims.k_context;
  Rng rng(seed);
  region_enc_ = StreamEncoder(3, static_cast<std::size_t>(dims.d_r), rng);
  sobel_enc_ = StreamEncoder(1, static_cast<std::size_t>(dims.d_s), rng);
  global_ = SepConvNet(dims, rng);
  head_ = Mlp2(fused_dim(), static_cast<std::size_t>(dims.head_hidden), 2, rng);
}

std::size_t M2Model::fused_dim() const {
  std::size_t n = 0;
  if (mask_.region) n += static_cast<std::size_t>(dims_.d_r);
  if (mask_.sobel) n += static_cast<std::size_t>(dims_.d_s);
  if (mask_.global) n += static_cast<std::size_t>(dims_.d_x);
  return n;
}

Tensor M2Model::crop_input(const Tensor& image, const Box& box) const {
  const auto c = static_cast<std::size_t>(dims_.crop);
  return bilinear_resize(crop(image, box), c, c);
}

Tensor M2Model::region_features(const Tensor& image) const {
  const RegionSet rs = region_extract(image, regions_);
  Tensor f = region_enc_(crop_input(image, rs.primary_region));
  if (!rs.context_regions.empty()) {
    std::vector<Tensor> ctx;
    for (const Box& b : rs.context_regions) {
      Tensor e = region_enc_(crop_input(image, b));
      ctx.push_back(reshape(e, {1, e.numel()}));
    }
    f = add(f, mean_rows(concat(ctx)));
  }
  return f;
}

Tensor M2Model::sobel_features(const Tensor& image) const {
  Tensor g = sobel(luminance(image)).g;
  return sobel_enc_(reshape(g, {1, g.dim(0), g.dim(1)}));
}

StreamFeatures M2Model::encode_streams(const Tensor& image) const {
  StreamFeatures sf;
  std::vector<Tensor> parts;
  if (mask_.region) parts.push_back(sf.f_region = region_features(image));
  if (mask_.sobel) parts.push_back(sf.f_sobel = sobel_features(image));
  if (mask_.global) parts.push_back(sf.f_global = global_.forward(image).vector);
  sf.fused = concat(parts);
  return sf;
}

Tensor M2Model::classify(const Tensor& image, const Tensor* cam_override,
                         Tensor* cam_out) const {
  if ((cam_override || cam_out) && !mask_.global)
    throw ConfigurationError("M2Model (" + mask_.name() +
                             ") has no global stream and thus no Grad-CAM layer");
  std::vector<Tensor> parts;
  if (mask_.region) parts.push_back(region_features(image));
  if (mask_.sobel) parts.push_back(sobel_features(image));
  if (mask_.global) {
    Tensor a = cam_override ? *cam_override : global_.trunk(image);
    if (cam_out) *cam_out = a;
    parts.push_back(global_.head(a).vector);
  }
  return head_(concat(parts));
}

Tensor M2Model::logits(const Tensor& image) const { return classify(image, nullptr, nullptr); }

Tensor M2Model::logits_with_cam(const Tensor& image, Tensor& cam_features) const {
  return classify(image, nullptr, &cam_features);
}

Tensor M2Model::logits_from_cam(const Tensor& image, const Tensor& cam_features) const {
  return classify(image, &cam_features, nullptr);
}

ParamList M2Model::parameters() const {
  ParamList out;
  if (mask_.region) region_enc_.collect(out, "m2.region");
  if (mask_.sobel) sobel_enc_.collect(out, "m2.sobel");
  if (mask_.global) global_.collect(out, "m2.global");
  head_.collect(out, "m2.head");
  return out;
}

}  // namespace hfmf
