#pragma once
// Small trainable stand-ins for the pretrained backbones: a ViT producing
// patch tokens, a three-stage residual CNN producing a feature pyramid, and a
// depthwise-separable CNN producing a global embedding.

#include <vector>

#include "hfmf/model_config.hpp"
#include "hfmf/nn.hpp"

namespace hfmf {

struct TokenMatrix {
  Tensor tokens;  // [N x d], patches in raster order
  std::size_t patch_size = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return tokens.dim(0); }
};

struct FeaturePyramid {
  Tensor f1;  // [C1 x H1 x W1], low level
  Tensor f2;
  Tensor f3;  // high level

  /// Spatial sizes strictly decrease and channel counts never decrease.
  bool well_formed() const;
};

struct Embedding {
  Tensor vector;  // [d_X]
};

/// [3 x H x W] -> [N x 3 p p], one row per patch in raster order; each row is
/// the patch flattened channel-major (c, y, x).
Tensor extract_patches(const Tensor& image, std::size_t patch);

/// Flattened patches projected by `proj` plus positional encodings `pos`
/// ([N x d]). Throws ConfigurationError if H or W is not divisible by p.
TokenMatrix patch_embed(const Tensor& image, std::size_t patch, const Linear& proj,
                        const Tensor& pos);

class TinyVit {
 public:
  struct Block {
    LayerNorm ln1;
    Linear query, key, value, out;
    LayerNorm ln2;
    Linear fc1, fc2;
  };

  TinyVit() = default;
  TinyVit(const ModelDims& dims, Rng& rng);

  TokenMatrix embed(const Tensor& image) const;
  /// Pre-norm transformer blocks over the patch tokens. When `attention` is
  /// given, the row-stochastic attention matrix of each block is appended.
  TokenMatrix forward(const Tensor& image, std::vector<Tensor>* attention = nullptr) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Linear& projection() { return proj_; }
  Tensor& positional() { return pos_; }
  std::vector<Block>& blocks() { return blocks_; }

 private:
  Tensor block_forward(const Block& b, const Tensor& x, std::vector<Tensor>* attention) const;

  std::size_t patch_ = 8;
  std::size_t image_size_ = 32;
  Linear proj_;
  Tensor pos_;
  std::vector<Block> blocks_;
};

class TinyCnn {
 public:
  /// out = relu(conv3x3/2(x) + conv1x1/2(x))
  struct Stage {
    Conv conv;
    Conv skip;
  };

  TinyCnn() = default;
  TinyCnn(const ModelDims& dims, Rng& rng);

  FeaturePyramid forward(const Tensor& image) const;
  static Tensor stage_forward(const Stage& stage, const Tensor& x);
  void collect(ParamList& out, const std::string& prefix) const;

  std::array<Stage, 3>& stages() { return stages_; }
  const std::array<Stage, 3>& stages() const { return stages_; }

 private:
  std::array<Stage, 3> stages_;
};

/// Depthwise-separable CNN. trunk() ends at the last convolutional block,
/// whose activations serve as the Grad-CAM feature layer.
class SepConvNet {
 public:
  /// relu(pointwise(depthwise(x)))
  struct SepBlock {
    DepthwiseConv depthwise;
    Conv pointwise;
  };

  SepConvNet() = default;
  SepConvNet(const ModelDims& dims, Rng& rng);

  Tensor trunk(const Tensor& image) const;
  Embedding head(const Tensor& features) const;
  Embedding forward(const Tensor& image) const { return head(trunk(image)); }
  static Tensor block_forward(const SepBlock& block, const Tensor& x);
  void collect(ParamList& out, const std::string& prefix) const;

  Conv& stem() { return stem_; }
  std::array<SepBlock, 2>& blocks() { return blocks_; }
  Linear& projection() { return head_; }

 private:
  Conv stem_;
  std::array<SepBlock, 2> blocks_;
  Linear head_;
};

}  // namespace hfmf
