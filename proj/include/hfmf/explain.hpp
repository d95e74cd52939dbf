#pragma once
// Grad-CAM over the M2 global stream's last conv block, overlap scoring
// against planted-artifact boxes, and PGM export.

#include <filesystem>
#include <vector>

#include "hfmf/image.hpp"
#include "hfmf/rng.hpp"
#include "hfmf/streams.hpp"

namespace hfmf {

struct Heatmap {
  Tensor values;     // [u x v], >= 0
  Tensor upsampled;  // [H x W], bilinear resize of values
  int target_class = 1;
  std::vector<double> alpha;  // per-channel weights
};

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of dA_k.
/// A and dA are [C x u x v]; returns [u x v] and fills `alpha` when given.
Tensor gradcam_map(const Tensor& activations, const Tensor& gradients,
                   std::vector<double>* alpha = nullptr);

/// Backward from the pre-softmax score of class c to the designated layer.
/// Leaves the model's parameter gradients zeroed. ConfigurationError when the
/// model has no global stream.
Heatmap gradcam(const M2Model& model, const Tensor& image, int target_class);

/// Fraction of the top-decile pixels of an [H x W] map inside `box`. The
/// threshold t is the ceil(0.1 H W)-th largest value and every pixel >= t is
/// selected, so ties are all in or all out. When t == 0 the positive pixels
/// are selected, or every pixel if none is positive.
double overlap_score(const Tensor& map, const Box& box);
inline double overlap_score(const Heatmap& h, const Box& box) {
  return overlap_score(h.upsampled, box);
}

/// Mean overlap of `map` with `n` uniformly placed w x h boxes.
double random_box_baseline(const Tensor& map, int w, int h, int n, Rng& rng);

/// Max-normalised 8-bit pixels, v / max * 255 rounded half up; all-zero maps
/// give all-zero bytes.
std::vector<std::uint8_t> heatmap_bytes(const Tensor& map);

/// Writes heatmap_bytes(map) as binary PGM. IoError names the path.
void export_heatmap(const Tensor& map, const std::filesystem::path& path);
inline void export_heatmap(const Heatmap& h, const std::filesystem::path& path) {
  export_heatmap(h.upsampled, path);
}

}  // namespace hfmf
