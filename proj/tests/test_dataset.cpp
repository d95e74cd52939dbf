#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hfmf/dataset.hpp"
#include "hfmf/errors.hpp"
#include "hfmf/streams.hpp"
#include "test_support.hpp"

using namespace hfmf;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

double box_energy(const Tensor& image, const Box& b) {
  const EdgeMap e = sobel(luminance(image));
  const std::size_t w = e.g.dim(1);
  double s = 0.0;
  for (int y = b.y; y < b.y + b.h; ++y)
    for (int x = b.x; x < b.x + b.w; ++x) s += e.g[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  return s;
}

void write_gray(const fs::path& p, std::size_t w, std::size_t h, std::uint8_t v) {
  write_pgm_bytes(p, w, h, std::vector<std::uint8_t>(w * h, v));
}

}  // namespace

TEST_CASE("synth_generate is a pure function of its arguments") {
  const Corpus a = synth_generate(42, 12, 32);
  const Corpus b = synth_generate(42, 12, 32);
  const Corpus c = synth_generate(43, 12, 32);
  REQUIRE(a.images.size() == b.images.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].id == b.images[i].id);
    CHECK(a.images[i].label == b.images[i].label);
    CHECK(a.images[i].split == b.images[i].split);
    CHECK(a.images[i].artifact_bbox == b.images[i].artifact_bbox);
    const auto pa = a.images[i].pixels.data(), pb = b.images[i].pixels.data();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin()));
    const auto pc = c.images[i].pixels.data();
    any_diff |= !std::equal(pa.begin(), pa.end(), pc.begin());
  }
  CHECK(any_diff);
  CHECK(manifest_json(a) == manifest_json(b));
}

TEST_CASE("synth_generate: counts, bboxes, ranges, balanced disjoint splits") {
  const Corpus c = synth_generate(7, 40, 32);
  int fakes = 0, reals = 0;
  std::set<std::string> ids;
  std::map<std::string, int> kinds;
  for (const auto& im : c.images) {
    CHECK(ids.insert(im.id).second);
    CHECK(im.pixels.shape() == Shape{3, 32, 32});
    for (double v : im.pixels.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (im.label == kFake) {
      ++fakes;
      REQUIRE(im.artifact_bbox.has_value());
      CHECK(im.artifact_bbox->within(32, 32));
      CHECK(im.artifact != ArtifactKind::kNone);
      ++kinds[artifact_name(im.artifact)];
    } else {
      ++reals;
      CHECK_FALSE(im.artifact_bbox.has_value());
    }
  }
  CHECK(fakes == 40);
  CHECK(reals == 40);
  CHECK(kinds.size() == 3);
  std::size_t total = 0;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    int r = 0, f = 0;
    for (std::size_t i : c.indices(s)) (c.images[i].label == kFake ? f : r)++;
    CHECK(r == f);
    CHECK(c.manifest.splits.at(split_name(s)).real == r);
    total += c.indices(s).size();
  }
  CHECK(total == c.images.size());
  CHECK(c.indices(Split::kTrain).size() == 56);
  CHECK(c.indices(Split::kVal).size() == 12);
}

TEST_CASE("synth_generate rejects invalid sizes and counts") {
  CHECK_THROWS_AS(synth_generate(1, 4, 30), ConfigurationError);
  CHECK_THROWS_AS(synth_generate(1, 1, 32), ConfigurationError);
  CHECK_THROWS_AS(synth_generate(1, 4, 0), ConfigurationError);
}

TEST_CASE("planted artifacts raise high-frequency energy inside the box") {
  int raised = 0, total = 0;
  for (ArtifactKind k : {ArtifactKind::kChecker, ArtifactKind::kBlend, ArtifactKind::kCopyMove}) {
    for (int i = 0; i < 100; ++i) {
      Rng rng(image_seed(42, kFake, i * 3 + static_cast<int>(k)));
      const FakeSample f = synthesize_fake(rng, 32, k);
      CHECK(f.bbox.within(32, 32));
      ++total;
      raised += box_energy(f.after, f.bbox) > box_energy(f.before, f.bbox);
      // outside the box, before and after agree
      for (std::size_t c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            if (!f.bbox.contains(x, y)) {
              const std::size_t j = (c * 32 + static_cast<std::size_t>(y)) * 32 + static_cast<std::size_t>(x);
              if (f.after[j] != f.before[j]) FAIL("pixel changed outside bbox");
            }
    }
  }
  CHECK(static_cast<double>(raised) / total >= 0.95);
}

TEST_CASE("PNM round trip is within 1/255") {
  TempDir dir("pnm");
  Rng rng(3);
  Tensor rgb({3, 5, 7});
  for (double& v : rgb.mutable_data()) v = rng.uniform();
  write_pnm(dir.path() / "a.ppm", rgb);
  const Tensor back = read_pnm(dir.path() / "a.ppm");
  REQUIRE(back.shape() == rgb.shape());
  for (std::size_t i = 0; i < rgb.numel(); ++i) CHECK(std::abs(back[i] - rgb[i]) <= 0.5 / 255.0 + 1e-12);

  Tensor g({4, 3});
  for (double& v : g.mutable_data()) v = rng.uniform();
  write_pnm(dir.path() / "g.pgm", g);
  const Tensor gb = read_pnm(dir.path() / "g.pgm");
  CHECK(gb.shape() == Shape{1, 4, 3});
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(std::abs(gb[i] - g[i]) <= 1.0 / 255.0);

  // header with a comment and maxval other than 255
  {
    std::ofstream f(dir.path() / "c.pgm", std::ios::binary);
    f << "P5\n# note\n2 1\n15\n";
    f.put(0);
    f.put(15);
  }
  const Tensor cm = read_pnm(dir.path() / "c.pgm");
  CHECK(cm[0] == 0.0);
  CHECK(cm[1] == 1.0);
}

TEST_CASE("read_pnm errors name the file") {
  TempDir dir("bad");
  const fs::path p = dir.path() / "broken.ppm";
  {
    std::ofstream f(p, std::ios::binary);
    f << "P6\n4 4\n255\nxx";
  }
  try {
    read_pnm(p);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("broken.ppm") != std::string::npos);
  }
  CHECK_THROWS_AS(read_pnm(dir.path() / "missing.ppm"), Error);
}

TEST_CASE("bilinear resampling: identity, constants and cell-centre consistency") {
  Rng rng(4);
  Tensor t({1, 6, 6});
  for (double& v : t.mutable_data()) v = rng.uniform();
  const Tensor same = bilinear_resize(t, 6, 6);
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(std::abs(same[i] - t[i]) < 1e-15);

  Tensor flat({3, 5, 5});
  for (double& v : flat.mutable_data()) v = 0.3;
  const Tensor flat_up = bilinear_resize(flat, 9, 4);
  for (double v : flat_up.data()) CHECK(std::abs(v - 0.3) < 1e-15);

  // Output pixel (i, j) samples input coordinates ((i + .5) * s - .5).
  Tensor m({6, 6});
  for (std::size_t i = 0; i < 36; ++i) m.mutable_data()[i] = t[i];
  const Tensor up = bilinear_resize(t, 15, 10);
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      const double y = (static_cast<double>(i) + 0.5) * 6.0 / 15.0 - 0.5;
      const double x = (static_cast<double>(j) + 0.5) * 6.0 / 10.0 - 0.5;
      CHECK(std::abs(up[i * 10 + j] - bilinear_at(m, y, x)) < 1e-12);
    }
}

TEST_CASE("load_dir: labels, order, resizing and layout errors") {
  TempDir dir("load");
  fs::create_directories(dir.path() / "real");
  fs::create_directories(dir.path() / "fake");
  write_gray(dir.path() / "real" / "b.pgm", 16, 16, 10);
  write_gray(dir.path() / "real" / "a.pgm", 16, 16, 20);
  write_gray(dir.path() / "real" / "c.pgm", 8, 8, 30);
  write_gray(dir.path() / "fake" / "z.pgm", 16, 16, 40);
  write_gray(dir.path() / "fake" / "y.pgm", 16, 16, 50);
  const Corpus c = load_dir(dir.path(), 16);
  REQUIRE(c.images.size() == 5);
  const std::vector<int> labels = {0, 0, 0, 1, 1};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(c.images[i].label == labels[i]);
    CHECK(c.images[i].pixels.shape() == Shape{3, 16, 16});
    CHECK_FALSE(c.images[i].artifact_bbox.has_value());
  }
  CHECK(c.images[0].pixels[0] == 20.0 / 255.0);
  CHECK(c.images[2].pixels[0] == 30.0 / 255.0);
  CHECK(c.images[3].pixels[0] == 50.0 / 255.0);

  fs::remove(dir.path() / "fake" / "z.pgm");
  fs::remove(dir.path() / "fake" / "y.pgm");
  CHECK_THROWS_AS(load_dir(dir.path(), 16), LayoutError);
  fs::remove_all(dir.path() / "fake");
  CHECK_THROWS_AS(load_dir(dir.path(), 16), LayoutError);
}

TEST_CASE("write_corpus then load_dir reproduces pixels, splits and boxes") {
  TempDir dir("corpus");
  const Corpus a = synth_generate(5, 6, 32);
  write_corpus(a, dir.path());
  CHECK(fs::exists(dir.path() / "manifest.json"));
  const Corpus b = load_dir(dir.path(), 32);
  REQUIRE(b.images.size() == a.images.size());
  std::map<std::string, const LabeledImage*> by_id;
  for (const auto& im : a.images) by_id[im.id] = &im;
  for (const auto& im : b.images) {
    REQUIRE(by_id.count(im.id) == 1);
    const LabeledImage& o = *by_id[im.id];
    CHECK(im.label == o.label);
    CHECK(im.split == o.split);
    CHECK(im.artifact_bbox == o.artifact_bbox);
    CHECK(im.artifact == o.artifact);
    for (std::size_t i = 0; i < im.pixels.numel(); ++i)
      CHECK(std::abs(im.pixels[i] - o.pixels[i]) <= 1.0 / 255.0);
  }
}
