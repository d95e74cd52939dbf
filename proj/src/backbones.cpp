#include "hfmf/backbones.hpp"

#include <cmath>

#include "hfmf/errors.hpp"

namespace hfmf {

void ModelDims::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigurationError(std::string(name) + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch, "patch");
  positive(d, "d");
  positive(vit_mlp, "vit_mlp");
  positive(head_hidden, "head_hidden");
  positive(d_x, "d_x");
  positive(d_r, "d_r");
  positive(d_s, "d_s");
  positive(crop, "crop");
  positive(ensemble_hidden, "ensemble_hidden");
  if (vit_blocks < 0) throw ConfigurationError("vit_blocks must be >= 0");
  if (k_context < 0) throw ConfigurationError("k_context must be >= 0");
  if (image_size % patch != 0)
    throw ConfigurationError("image_size " + std::to_string(image_size) +
                             " is not divisible by patch size " + std::to_string(patch));
  if (image_size < 16 || image_size % 8 != 0)
    throw ConfigurationError("image_size must be a multiple of 8 and >= 16");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    positive(channels[i], "channels");
    if (i > 0 && channels[i] < channels[i - 1])
      throw ConfigurationError("CNN channel counts must not decrease");
  }
}

bool FeaturePyramid::well_formed() const {
  const Tensor* f[] = {&f1, &f2, &f3};
  for (int i = 1; i < 3; ++i) {
    if (!(f[i]->dim(1) < f[i - 1]->dim(1) && f[i]->dim(2) < f[i - 1]->dim(2)))
      return false;
    if (f[i]->dim(0) < f[i - 1]->dim(0)) return false;
  }
  return true;
}

Tensor extract_patches(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3)
    throw DimensionError("extract_patches: expected [C x H x W], got " +
                         shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ConfigurationError("image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible into " + std::to_string(patch) + "x" +
                             std::to_string(patch) + " patches");
  const std::size_t gh = h / patch, gw = w / patch, len = c * patch * patch;
  Tensor out({gh * gw, len});
  auto o = out.mutable_data();
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = o.data() + (py * gw + px) * len;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            row[(ch * patch + y) * patch + x] =
                image[(ch * h + py * patch + y) * w + px * patch + x];
    }
  return out;
}

TokenMatrix patch_embed(const Tensor& image, std::size_t patch, const Linear& proj,
                        const Tensor& pos) {
  Tensor patches = extract_patches(image, patch);
  Tensor tokens = proj(patches);
  if (pos.defined()) {
    if (pos.shape() != tokens.shape())
      throw DimensionError("patch_embed: positional encodings " + shape_str(pos.shape()) +
                           " do not match tokens " + shape_str(tokens.shape()));
    tokens = add(tokens, pos);
  }
  return {tokens, patch, image.dim(1), image.dim(2)};
}

// ---------------------------------------------------------------------------

TinyVit::TinyVit(const ModelDims& dims, Rng& rng)
    : patch_(static_cast<std::size_t>(dims.patch)),
      image_size_(static_cast<std::size_t>(dims.image_size)) {
  const auto d = static_cast<std::size_t>(dims.d);
  const std::size_t n = (image_size_ / patch_) * (image_size_ / patch_);
  proj_ = Linear(3 * patch_ * patch_, d, rng, 0.5);
  pos_ = normal_param({n, d}, rng, 0.02);
  for (int i = 0; i < dims.vit_blocks; ++i) {
    Block b;
    b.ln1 = LayerNorm(d);
    b.query = Linear(d, d, rng, 0.5);
    b.key = Linear(d, d, rng, 0.5);
    b.value = Linear(d, d, rng, 0.5);
    b.out = Linear(d, d, rng, 0.5);
    b.ln2 = LayerNorm(d);
    b.fc1 = Linear(d, static_cast<std::size_t>(dims.vit_mlp), rng);
    b.fc2 = Linear(static_cast<std::size_t>(dims.vit_mlp), d, rng, 0.5);
    blocks_.push_back(std::move(b));
  }
}

TokenMatrix TinyVit::embed(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) != image_size_ || image.dim(2) != image_size_)
    throw DimensionError("TinyVit: expected [3 x " + std::to_string(image_size_) + " x " +
                         std::to_string(image_size_) + "] image, got " +
                         shape_str(image.shape()));
  return patch_embed(image, patch_, proj_, pos_);
}

Tensor TinyVit::block_forward(const Block& b, const Tensor& x,
                              std::vector<Tensor>* attention) const {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  Tensor h = b.ln1(x);
  Tensor q = b.query(h), k = b.key(h), v = b.value(h);
  Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  if (attention) attention->push_back(attn);
  Tensor y = add(x, b.out(matmul(attn, v)));
  return add(y, b.fc2(gelu(b.fc1(b.ln2(y)))));
}

TokenMatrix TinyVit::forward(const Tensor& image, std::vector<Tensor>* attention) const {
  TokenMatrix tm = embed(image);
  for (const Block& b : blocks_) tm.tokens = block_forward(b, tm.tokens, attention);
  return tm;
}

void TinyVit::collect(ParamList& out, const std::string& prefix) const {
  proj_.collect(out, prefix + ".patch_proj");
  out.push_back({prefix + ".pos", pos_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    const Block& b = blocks_[i];
    b.ln1.collect(out, p + ".ln1");
    b.query.collect(out, p + ".query");
    b.key.collect(out, p + ".key");
    b.value.collect(out, p + ".value");
    b.out.collect(out, p + ".attn_out");
    b.ln2.collect(out, p + ".ln2");
    b.fc1.collect(out, p + ".fc1");
    b.fc2.collect(out, p + ".fc2");
  }
}

// ---------------------------------------------------------------------------

TinyCnn::TinyCnn(const ModelDims& dims, Rng& rng) {
  std::size_t in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto out = static_cast<std::size_t>(dims.channels[i]);
    stages_[i].conv = Conv(in, out, 3, 2, 1, rng);
    stages_[i].skip = Conv(in, out, 1, 2, 0, rng);
    in = out;
  }
}

Tensor TinyCnn::stage_forward(const Stage& stage, const Tensor& x) {
  return relu(add(stage.conv(x), stage.skip(x)));
}

FeaturePyramid TinyCnn::forward(const Tensor& image) const {
  FeaturePyramid fp;
  fp.f1 = stage_forward(stages_[0], image);
  fp.f2 = stage_forward(stages_[1], fp.f1);
  fp.f3 = stage_forward(stages_[2], fp.f2);
  return fp;
}

void TinyCnn::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i + 1);
    stages_[i].conv.collect(out, p + ".conv");
    stages_[i].skip.collect(out, p + ".skip");
  }
}

// ---------------------------------------------------------------------------

SepConvNet::SepConvNet(const ModelDims& dims, Rng& rng)
    : stem_(3, 16, 3, 2, 1, rng) {
  blocks_[0] = {DepthwiseConv(16, 3, 1, 1, rng), Conv(16, 32, 1, 1, 0, rng)};
  blocks_[1] = {DepthwiseConv(32, 3, 2, 1, rng), Conv(32, 64, 1, 1, 0, rng)};
  head_ = Linear(64, static_cast<std::size_t>(dims.d_x), rng, 0.5);
}

Tensor SepConvNet::block_forward(const SepBlock& block, const Tensor& x) {
  return relu(block.pointwise(block.depthwise(x)));
}

Tensor SepConvNet::trunk(const Tensor& image) const {
  Tensor x = relu(stem_(image));
  for (const SepBlock& b : blocks_) x = block_forward(b, x);
  return x;
}

Embedding SepConvNet::head(const Tensor& features) const {
  return {head_(global_avg_pool(features))};
}

void SepConvNet::collect(ParamList& out, const std::string& prefix) const {
  stem_.collect(out, prefix + ".stem");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".sep" + std::to_string(i + 1);
    blocks_[i].depthwise.collect(out, p + ".depthwise");
    blocks_[i].pointwise.collect(out, p + ".pointwise");
  }
  head_.collect(out, prefix + ".head");
}

}  // namespace hfmf
