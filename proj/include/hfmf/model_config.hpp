#pragma once

#include <array>

namespace hfmf {

/// Network dimensions shared by every model in the pipeline.
struct ModelDims {
  int image_size = 32;
  int patch = 8;           // ViT patch size
  int d = 64;              // token width
  int vit_blocks = 2;
  int vit_mlp = 128;       // transformer MLP hidden width
  std::array<int, 3> channels{16, 32, 64};  // CNN stage widths
  int head_hidden = 32;    // M1 / M2 classifier hidden width
  int d_x = 64;            // global (separable-conv) embedding
  int d_r = 64;            // region embedding
  int d_s = 64;            // Sobel embedding
  int crop = 16;           // region crops are resized to crop x crop
  int k_context = 3;       // context regions besides the primary one
  int ensemble_hidden = 16;

  /// Throws ConfigurationError on inconsistent values.
  void validate() const;
};

}  // namespace hfmf
