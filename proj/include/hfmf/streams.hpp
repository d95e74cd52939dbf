#pragma once
// Module 2: region, Sobel-texture and global streams concatenated into one
// feature vector and classified by an MLP.

#include <vector>

#include "hfmf/backbones.hpp"
#include "hfmf/image.hpp"

namespace hfmf {

struct EdgeMap {
  Tensor g;   // [H x W], sqrt(gx^2 + gy^2)
  Tensor gx;  // [H x W]
  Tensor gy;  // [H x W]
};

/// 3x3 Sobel cross-correlation with replicate padding on a [H x W] image
/// (H, W >= 3). gx uses [[-1,0,1],[-2,0,2],[-1,0,1]], gy its transpose.
EdgeMap sobel(const Tensor& gray);

struct RegionOptions {
  int window = 0;     // candidate box side; 0 selects image_size / 4
  int stride = 0;     // 0 selects window / 2
  int k_context = 3;
  double nms_iou = 0.5;
};

struct RegionSet {
  Box primary_region;
  std::vector<Box> context_regions;
  std::vector<double> saliency_scores;  // primary first, then context boxes
};

/// Deterministic local-variance proposer over a fixed grid of square windows
/// on the luminance image. The highest-variance window is the primary region
/// (ties broken by raster order); the next k windows surviving IoU
/// suppression are context regions. If every window scores the same, the
/// primary region is the centred half-size box.
RegionSet region_extract(const Tensor& image, const RegionOptions& options = {});

/// conv3x3/2 -> relu -> conv3x3/2 -> relu -> global pool -> linear.
class StreamEncoder {
 public:
  StreamEncoder() = default;
  StreamEncoder(std::size_t in_channels, std::size_t out_dim, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  Conv c1_, c2_;
  Linear head_;
};

/// Which streams feed the classifier (ablation switch).
struct StreamMask {
  bool region = true;
  bool sobel = true;
  bool global = true;

  std::string name() const;
};

struct StreamFeatures {
  Tensor f_region;  // [d_r]  (undefined when masked out)
  Tensor f_sobel;   // [d_s]
  Tensor f_global;  // [d_X]
  Tensor fused;     // enabled parts concatenated as (region, sobel, global)
};

class M2Model : public Model<Tensor> {
 public:
  M2Model(const ModelDims& dims, std::uint64_t seed, StreamMask mask = {});

  /// Primary crop + mean-pooled context crops, summed.
  Tensor region_features(const Tensor& image) const;
  Tensor sobel_features(const Tensor& image) const;
  StreamFeatures encode_streams(const Tensor& image) const;

  Tensor logits(const Tensor& image) const override;
  ParamList parameters() const override;

  /// Whether the Grad-CAM feature layer (last global-stream conv block)
  /// exists in this configuration.
  bool has_cam_layer() const { return mask_.global; }
  /// Logits plus the cached Grad-CAM layer activations [C x u x v].
  Tensor logits_with_cam(const Tensor& image, Tensor& cam_features) const;
  /// Logits with the Grad-CAM layer activations replaced by `cam_features`.
  Tensor logits_from_cam(const Tensor& image, const Tensor& cam_features) const;

  const StreamMask& mask() const { return mask_; }
  std::size_t fused_dim() const;
  const ModelDims& dims() const { return dims_; }
  SepConvNet& global_net() { return global_; }
  Mlp2& head() { return head_; }

 private:
  Tensor crop_input(const Tensor& image, const Box& box) const;
  Tensor classify(const Tensor& image, const Tensor* cam_override, Tensor* cam_out) const;

  ModelDims dims_;
  StreamMask mask_;
  RegionOptions regions_;
  StreamEncoder region_enc_;
  StreamEncoder sobel_enc_;
  SepConvNet global_;
  Mlp2 head_;
};

}  // namespace hfmf
