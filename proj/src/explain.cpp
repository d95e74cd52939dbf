#include "hfmf/explain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "hfmf/errors.hpp"

namespace hfmf {

Tensor gradcam_map(const Tensor& activations, const Tensor& gradients,
                   std::vector<double>* alpha) {
  if (activations.rank() != 3 || activations.shape() != gradients.shape())
    throw DimensionError("gradcam: activations " + shape_str(activations.shape()) +
                         " and gradients " + shape_str(gradients.shape()) +
                         " must both be [C x u x v]");
  const std::size_t c = activations.dim(0), u = activations.dim(1), v = activations.dim(2);
  const std::size_t hw = u * v;
  Tensor map({u, v});
  auto out = map.mutable_data();
  if (alpha) alpha->assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double a = 0.0;
    for (std::size_t i = 0; i < hw; ++i) a += gradients[k * hw + i];
    a /= static_cast<double>(hw);
    if (alpha) (*alpha)[k] = a;
    for (std::size_t i = 0; i < hw; ++i) out[i] += a * activations[k * hw + i];
  }
  for (double& x : out) x = std::max(x, 0.0);
  return map;
}

Heatmap gradcam(const M2Model& model, const Tensor& image, int target_class) {
  if (!model.has_cam_layer())
    throw ConfigurationError("gradcam: M2 variant '" + model.mask().name() +
                             "' has no designated convolutional layer");
  if (target_class != 0 && target_class != 1)
    throw ContractError("gradcam: target class must be 0 or 1");
  Tensor features;
  {
    NoGradGuard guard;
    model.logits_with_cam(image, features);
  }
  Tensor a = features.detach();
  a.set_requires_grad(true);
  const Tensor logits = model.logits_from_cam(image, a);
  backward(select(logits, static_cast<std::size_t>(target_class)));
  zero_grads(model.parameters());

  Heatmap h;
  h.target_class = target_class;
  const Tensor grad(a.shape(), std::vector<double>(a.grad().begin(), a.grad().end()));
  h.values = gradcam_map(a, grad, &h.alpha);
  h.upsampled = bilinear_resize(h.values, image.dim(1), image.dim(2));
  for (double& x : h.upsampled.mutable_data()) x = std::max(x, 0.0);
  return h;
}

double overlap_score(const Tensor& map, const Box& box) {
  if (map.rank() != 2) throw DimensionError("overlap_score: expected an [H x W] map");
  const int h = static_cast<int>(map.dim(0)), w = static_cast<int>(map.dim(1));
  if (!box.within(w, h)) throw ContractError("overlap_score: box outside the map");
  const auto values = map.data();
  const std::size_t n = values.size();
  const auto k = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n)));
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end(), std::greater<>());
  const double t = sorted[k - 1];
  std::function<bool(double)> chosen = [t](double v) { return v >= t; };
  if (t <= 0.0) {
    const bool any_positive =
        std::any_of(values.begin(), values.end(), [](double v) { return v > 0.0; });
    chosen = any_positive ? std::function<bool(double)>([](double v) { return v > 0.0; })
                          : std::function<bool(double)>([](double) { return true; });
  }
  std::size_t selected = 0, inside = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (chosen(values[static_cast<std::size_t>(y * w + x)])) {
        ++selected;
        inside += box.contains(x, y);
      }
  return static_cast<double>(inside) / static_cast<double>(selected);
}

double random_box_baseline(const Tensor& map, int w, int h, int n, Rng& rng) {
  const int mh = static_cast<int>(map.dim(0)), mw = static_cast<int>(map.dim(1));
  if (w < 1 || h < 1 || w > mw || h > mh || n < 1)
    throw ContractError("random_box_baseline: box does not fit the map");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Box b{static_cast<int>(rng.integer(0, mw - w)), static_cast<int>(rng.integer(0, mh - h)),
                w, h};
    total += overlap_score(map, b);
  }
  return total / n;
}

std::vector<std::uint8_t> heatmap_bytes(const Tensor& map) {
  const auto v = map.data();
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, x);
  std::vector<std::uint8_t> out(v.size(), 0);
  if (peak <= 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double q = std::floor(std::clamp(v[i] / peak, 0.0, 1.0) * 255.0 + 0.5);
    out[i] = static_cast<std::uint8_t>(std::min(q, 255.0));
  }
  return out;
}

void export_heatmap(const Tensor& map, const std::filesystem::path& path) {
  if (map.rank() != 2) throw DimensionError("export_heatmap: expected an [H x W] map");
  write_pgm_bytes(path, map.dim(1), map.dim(0), heatmap_bytes(map));
}

}  // namespace hfmf
