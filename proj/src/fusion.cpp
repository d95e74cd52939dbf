#include "hfmf/fusion.hpp"

#include <cmath>

#include "hfmf/errors.hpp"

namespace hfmf {

Tensor project_flatten(const Tensor& feature_map, const Linear& proj) {
  if (feature_map.rank() != 3)
    throw DimensionError("project_flatten: expected [C x H x W], got " +
                         shape_str(feature_map.shape()));
  const std::size_t c = feature_map.dim(0);
  const std::size_t hw = feature_map.dim(1) * feature_map.dim(2);
  Tensor rows = transpose(reshape(feature_map, {c, hw}));  // [(H W) x C]
  return proj(rows);
}

Tensor hds(const Tensor& query, const Tensor& kv) {
  if (query.rank() != 2 || kv.rank() != 2 || query.dim(1) != kv.dim(1))
    throw ContractError("hds: query " + shape_str(query.shape()) + " and keys " +
                        shape_str(kv.shape()) + " must share the last dimension");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.dim(1)));
  Tensor scores = scale(matmul(query, transpose(kv)), inv_sqrt_d);
  return matmul(softmax_rows(scores), kv);
}

HierarchicalFusion::HierarchicalFusion(const ModelDims& dims, Rng& rng) {
  for (std::size_t i = 0; i < 3; ++i)
    proj_[i] = Linear(static_cast<std::size_t>(dims.channels[i]),
                      static_cast<std::size_t>(dims.d), rng, 0.5);
}

std::array<Tensor, 3> HierarchicalFusion::project(const FeaturePyramid& pyramid) const {
  return {project_flatten(pyramid.f1, proj_[0]), project_flatten(pyramid.f2, proj_[1]),
          project_flatten(pyramid.f3, proj_[2])};
}

FusionChain HierarchicalFusion::fuse(const TokenMatrix& tokens,
                                     const FeaturePyramid& pyramid) const {
  const auto levels = project(pyramid);
  FusionChain chain;
  chain.z_low = hds(tokens.tokens, levels[0]);
  chain.z_mid = hds(chain.z_low, levels[1]);
  chain.z_high = hds(chain.z_mid, levels[2]);
  return chain;
}

void HierarchicalFusion::collect(ParamList& out, const std::string& prefix) const {
  static const char* names[] = {".proj_low", ".proj_mid", ".proj_high"};
  for (std::size_t i = 0; i < 3; ++i) proj_[i].collect(out, prefix + names[i]);
}

const char* m1_variant_name(M1Variant v) {
  switch (v) {
    case M1Variant::kFull: return "m1";
    case M1Variant::kVitOnly: return "vit_only";
    case M1Variant::kCnnOnly: return "cnn_only";
  }
  return "?";
}

M1Model::M1Model(const ModelDims& dims, std::uint64_t seed, M1Variant variant)
    : variant_(variant) {
  dims.validate();
  Rng rng(seed);
  vit_ = TinyVit(dims, rng);
  cnn_ = TinyCnn(dims, rng);
  fusion_ = HierarchicalFusion(dims, rng);
  head_ = Mlp2(static_cast<std::size_t>(dims.d), static_cast<std::size_t>(dims.head_hidden),
               2, rng);
}

FusionChain M1Model::chain(const Tensor& image) const {
  return fusion_.fuse(vit_.forward(image), cnn_.forward(image));
}

Tensor M1Model::logits(const Tensor& image) const {
  switch (variant_) {
    case M1Variant::kFull:
      return head_(mean_rows(chain(image).v_final()));
    case M1Variant::kVitOnly:
      return head_(mean_rows(vit_.forward(image).tokens));
    case M1Variant::kCnnOnly:
      return head_(mean_rows(project_flatten(cnn_.forward(image).f3,
                                             fusion_.projections()[2])));
  }
  throw ContractError("M1Model: unknown variant");
}

ParamList M1Model::parameters() const {
  ParamList out;
  if (variant_ != M1Variant::kCnnOnly) vit_.collect(out, "m1.vit");
  if (variant_ != M1Variant::kVitOnly) cnn_.collect(out, "m1.cnn");
  if (variant_ == M1Variant::kFull) {
    fusion_.collect(out, "m1.fusion");
  } else if (variant_ == M1Variant::kCnnOnly) {
    fusion_.projections()[2].collect(out, "m1.fusion.proj_high");
  }
  head_.collect(out, "m1.head");
  return out;
}

}  // namespace hfmf
