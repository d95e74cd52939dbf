#include <cmath>

#include "doctest.h"
#include "hfmf/backbones.hpp"
#include "hfmf/errors.hpp"
#include "test_support.hpp"

using namespace hfmf;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

void fill(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

Tensor random_image(Rng& rng, std::size_t size = 32) {
  Tensor t({3, size, size});
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

double grad_norm(const Tensor& t) {
  double s = 0.0;
  for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("patch_embed: token count, zero projection and manual patch oracle") {
  Rng rng(3);
  const ModelDims dims;
  const Tensor image = random_image(rng);
  Linear proj(3 * 8 * 8, 64, rng);
  Tensor pos = random_tensor({16, 64}, rng);

  const TokenMatrix tm = patch_embed(image, 8, proj, pos);
  CHECK(tm.count() == 16);
  CHECK(tm.tokens.shape() == Shape{16, 64});

  // token i == proj(manually extracted patch i) + pos[i]
  for (std::size_t i = 0; i < 16; ++i) {
    const std::size_t py = i / 4, px = i % 4;
    std::vector<double> patch;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          patch.push_back(image[(c * 32 + py * 8 + y) * 32 + px * 8 + x]);
    for (std::size_t j = 0; j < 64; ++j) {
      double want = proj.bias[j] + pos[i * 64 + j];
      for (std::size_t q = 0; q < patch.size(); ++q) want += patch[q] * proj.weight[q * 64 + j];
      CHECK(std::abs(tm.tokens[i * 64 + j] - want) < 1e-12);
    }
  }

  fill(proj.weight, 0.0);
  fill(proj.bias, 0.0);
  fill(pos, 0.0);
  const TokenMatrix zero = patch_embed(image, 8, proj, pos);
  for (double v : zero.tokens.data()) CHECK(v == 0.0);
}

TEST_CASE("patch_embed rejects indivisible images") {
  Rng rng(1);
  Linear proj(3 * 8 * 8, 4, rng);
  CHECK_THROWS_AS(patch_embed(Tensor({3, 30, 32}), 8, proj, Tensor()), ConfigurationError);
  ModelDims bad;
  bad.image_size = 36;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
}

TEST_CASE("TinyVit: shape, row-stochastic attention, residual identity") {
  Rng rng(5);
  ModelDims dims;
  TinyVit vit(dims, rng);
  const Tensor image = random_image(rng);
  std::vector<Tensor> attn;
  const TokenMatrix out = vit.forward(image, &attn);
  CHECK(out.tokens.shape() == Shape{16, 64});
  REQUIRE(attn.size() == 2);
  for (const Tensor& a : attn)
    for (std::size_t r = 0; r < a.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.dim(1); ++c) s += a[r * a.dim(1) + c];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }

  for (auto& b : vit.blocks()) {
    fill(b.out.weight, 0.0);
    fill(b.out.bias, 0.0);
    fill(b.fc2.weight, 0.0);
    fill(b.fc2.bias, 0.0);
  }
  const TokenMatrix id = vit.forward(image);
  const TokenMatrix emb = vit.embed(image);
  CHECK(max_abs_diff(id.tokens.data(), emb.tokens.data()) == 0.0);
}

TEST_CASE("TinyCnn: pyramid shapes, zero input, decomposed residual oracle") {
  Rng rng(7);
  ModelDims dims;
  TinyCnn cnn(dims, rng);
  const Tensor image = random_image(rng);
  const FeaturePyramid fp = cnn.forward(image);
  CHECK(fp.f1.shape() == Shape{16, 16, 16});
  CHECK(fp.f2.shape() == Shape{32, 8, 8});
  CHECK(fp.f3.shape() == Shape{64, 4, 4});
  CHECK(fp.well_formed());

  // Each stage: relu(conv path + skip path), paths computed separately.
  const auto& st = cnn.stages()[1];
  const auto conv = testing::conv2d_oracle(fp.f1, st.conv.kernel, st.conv.bias, 2, 1);
  const auto skip = testing::conv2d_oracle(fp.f1, st.skip.kernel, st.skip.bias, 2, 0);
  for (std::size_t i = 0; i < conv.size(); ++i)
    CHECK(std::abs(fp.f2[i] - std::max(0.0, conv[i] + skip[i])) < 1e-12);

  for (auto& s : cnn.stages()) {
    fill(s.conv.bias, 0.0);
    fill(s.skip.bias, 0.0);
  }
  const FeaturePyramid z = cnn.forward(Tensor({3, 32, 32}));
  for (const Tensor* f : {&z.f1, &z.f2, &z.f3})
    for (double v : f->data()) CHECK(v == 0.0);
}

TEST_CASE("FeaturePyramid shape invariant holds for other input sizes") {
  for (int size : {16, 24, 48, 64}) {
    Rng rng(static_cast<std::uint64_t>(size));
    ModelDims dims;
    dims.image_size = size;
    TinyCnn cnn(dims, rng);
    CHECK(cnn.forward(random_image(rng, static_cast<std::size_t>(size))).well_formed());
  }
}

TEST_CASE("SepConvNet: separable block decomposition, output length, translation") {
  Rng rng(9);
  ModelDims dims;
  SepConvNet net(dims, rng);
  const Tensor image = random_image(rng);
  CHECK(net.forward(image).vector.shape() == Shape{64});

  // depthwise then pointwise, computed step by step with the loop oracle
  const auto& blk = net.blocks()[1];
  const Tensor x = random_tensor({32, 8, 8}, rng);
  std::vector<double> dw(32 * 4 * 4);
  for (std::size_t c = 0; c < 32; ++c) {
    Tensor xc({1, 8, 8}, std::vector<double>(x.data().begin() + c * 64, x.data().begin() + (c + 1) * 64));
    Tensor kc({1, 1, 3, 3}, std::vector<double>(blk.depthwise.kernel.data().begin() + c * 9,
                                                 blk.depthwise.kernel.data().begin() + (c + 1) * 9));
    Tensor bc({1}, {blk.depthwise.bias[c]});
    const auto o = testing::conv2d_oracle(xc, kc, bc, 2, 1);
    std::copy(o.begin(), o.end(), dw.begin() + static_cast<std::ptrdiff_t>(c * 16));
  }
  const auto pw = testing::conv2d_oracle(Tensor({32, 4, 4}, dw), blk.pointwise.kernel,
                                         blk.pointwise.bias, 1, 0);
  const Tensor got = SepConvNet::block_forward(blk, x);
  for (std::size_t i = 0; i < pw.size(); ++i)
    CHECK(std::abs(got[i] - std::max(0.0, pw[i])) < 1e-12);

  // Constant field: a bias-free network with global pooling sees the same
  // embedding wherever the (infinite) constant field is sampled.
  fill(net.stem().bias, 0.0);
  for (auto& b : net.blocks()) {
    fill(b.depthwise.bias, 0.0);
    fill(b.pointwise.bias, 0.0);
  }
  Tensor a({3, 32, 32}), b({3, 32, 32});
  fill(a, 0.4);
  fill(b, 0.4);
  const Tensor ea = net.forward(a).vector, eb = net.forward(b).vector;
  CHECK(max_abs_diff(ea.data(), eb.data()) == 0.0);
}

TEST_CASE("backbone forwards are deterministic and reach every parameter") {
  Rng rng(11);
  ModelDims dims;
  TinyVit vit(dims, rng);
  TinyCnn cnn(dims, rng);
  SepConvNet sep(dims, rng);
  const Tensor image = random_image(rng);

  CHECK(max_abs_diff(vit.forward(image).tokens.data(), vit.forward(image).tokens.data()) == 0.0);
  Tape::current().clear();

  Tensor loss = add(add(sum(mul(vit.forward(image).tokens, vit.forward(image).tokens)),
                        sum(cnn.forward(image).f3)),
                    sum(sep.forward(image).vector));
  backward(loss);
  ParamList params;
  vit.collect(params, "vit");
  cnn.collect(params, "cnn");
  sep.collect(params, "sep");
  for (const auto& p : params) {
    INFO(p.name);
    CHECK(grad_norm(p.tensor) > 0.0);
  }
  zero_grads(params);
}
