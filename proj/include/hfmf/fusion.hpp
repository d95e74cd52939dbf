#pragma once
// Module 1: ViT tokens attend over CNN pyramid levels, low to high, with
// bare scaled dot-product attention; the pooled result feeds an MLP head.

#include "hfmf/backbones.hpp"

namespace hfmf {

/// Stage map [C x H x W] -> [(H W) x d]: a learned per-position C -> d map,
/// rows in raster order.
Tensor project_flatten(const Tensor& feature_map, const Linear& proj);

/// softmax(q kv^T / sqrt(d)) kv for q [N x d], kv [M x d].
Tensor hds(const Tensor& query, const Tensor& kv);

struct FusionChain {
  Tensor z_low;
  Tensor z_mid;
  Tensor z_high;

  const Tensor& v_final() const { return z_high; }
};

class HierarchicalFusion {
 public:
  HierarchicalFusion() = default;
  HierarchicalFusion(const ModelDims& dims, Rng& rng);

  /// Projected pyramid levels, each [(H_i W_i) x d].
  std::array<Tensor, 3> project(const FeaturePyramid& pyramid) const;
  FusionChain fuse(const TokenMatrix& tokens, const FeaturePyramid& pyramid) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::array<Linear, 3>& projections() { return proj_; }
  const std::array<Linear, 3>& projections() const { return proj_; }

 private:
  std::array<Linear, 3> proj_;
};

/// Which branches of Module 1 are active; the single-backbone variants are
/// used for ablations.
enum class M1Variant { kFull, kVitOnly, kCnnOnly };
const char* m1_variant_name(M1Variant v);

class M1Model : public Model<Tensor> {
 public:
  M1Model(const ModelDims& dims, std::uint64_t seed, M1Variant variant = M1Variant::kFull);

  /// Two raw logits (real, fake).
  Tensor logits(const Tensor& image) const override;
  /// The full fusion chain for inspection (kFull only).
  FusionChain chain(const Tensor& image) const;
  ParamList parameters() const override;

  M1Variant variant() const { return variant_; }
  TinyVit& vit() { return vit_; }
  TinyCnn& cnn() { return cnn_; }
  HierarchicalFusion& fusion() { return fusion_; }
  Mlp2& head() { return head_; }

 private:
  M1Variant variant_;
  TinyVit vit_;
  TinyCnn cnn_;
  HierarchicalFusion fusion_;
  Mlp2 head_;
};

}  // namespace hfmf
