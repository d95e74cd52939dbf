#include "hfmf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "hfmf/errors.hpp"
#include "hfmf/streams.hpp"
#include "json.hpp"

namespace hfmf {

using nlohmann::json;
namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split '" + name + "'");
}

const char* artifact_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::kNone: return "none";
    case ArtifactKind::kChecker: return "checker";
    case ArtifactKind::kBlend: return "blend";
    case ArtifactKind::kCopyMove: return "copymove";
  }
  return "?";
}

ArtifactKind parse_artifact(const std::string& name) {
  for (ArtifactKind k : {ArtifactKind::kNone, ArtifactKind::kChecker,
                         ArtifactKind::kBlend, ArtifactKind::kCopyMove})
    if (name == artifact_name(k)) return k;
  throw FormatError("unknown artifact kind '" + name + "'");
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].split == split) out.push_back(i);
  return out;
}

namespace {

constexpr double kNoiseStd = 0.01;

// Smooth colour field without noise: base + linear gradient (+ blobs).
Tensor smooth_field(Rng& rng, int size, bool with_blobs) {
  const auto s = static_cast<std::size_t>(size);
  Tensor img({3, s, s});
  auto px = img.mutable_data();
  double base[3], amp[3];
  for (int c = 0; c < 3; ++c) base[c] = rng.uniform(0.25, 0.75);
  const double theta = rng.uniform(0.0, 6.283185307179586);
  for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(-0.25, 0.25);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double t = (static_cast<double>(x) * ct + static_cast<double>(y) * st) / size;
        px[(c * s + y) * s + x] = base[c] + amp[c] * t;
      }
  if (!with_blobs) return img;
  const int blobs = 2 + static_cast<int>(rng.below(3));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
    const double sigma = rng.uniform(0.15, 0.35) * size;
    double a[3];
    for (double& v : a) v = rng.uniform(-0.25, 0.25);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        for (std::size_t c = 0; c < 3; ++c) px[(c * s + y) * s + x] += a[c] * g;
      }
  }
  return img;
}

std::vector<double> noise_field(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * kNoiseStd;
  return v;
}

Tensor finish(const Tensor& clean, const std::vector<double>& noise) {
  Tensor out = clean.detach();
  auto px = out.mutable_data();
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = std::clamp(px[i] + noise[i], 0.0, 1.0);
  return out;
}

double mean_abs_diff(const Tensor& a, const Box& ba, const Tensor& b, const Box& bb) {
  const std::size_t s = a.dim(1);
  double acc = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (int y = 0; y < ba.h; ++y)
      for (int x = 0; x < ba.w; ++x)
        acc += std::abs(a[(c * s + static_cast<std::size_t>(ba.y + y)) * s +
                          static_cast<std::size_t>(ba.x + x)] -
                        b[(c * s + static_cast<std::size_t>(bb.y + y)) * s +
                          static_cast<std::size_t>(bb.x + x)]);
  return acc / (3.0 * ba.area());
}

bool disjoint(const Box& a, const Box& b) {
  return a.x + a.w <= b.x || b.x + b.w <= a.x || a.y + a.h <= b.y || b.y + b.h <= a.y;
}

void plant_checker(Tensor& img, const Box& box, Rng& rng) {
  const std::size_t s = img.dim(1);
  // cells of 1 px are invisible to a 3x3 Sobel (both taps see the same sign)
  const int cell = 2 + static_cast<int>(rng.below(2));
  const double amp = rng.uniform(0.12, 0.25);
  auto px = img.mutable_data();
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) {
      const double sign = ((x / cell + y / cell) % 2 == 0) ? 1.0 : -1.0;
      for (std::size_t c = 0; c < 3; ++c)
        px[(c * s + static_cast<std::size_t>(box.y + y)) * s +
           static_cast<std::size_t>(box.x + x)] += sign * amp;
    }
}

// Sum of Sobel magnitude over `box` on the luminance of `img`.
double box_edge_energy(const Tensor& img, const Box& box) {
  const EdgeMap e = sobel(luminance(img));
  const std::size_t w = e.g.dim(1);
  double acc = 0.0;
  for (int y = box.y; y < box.y + box.h; ++y)
    for (int x = box.x; x < box.x + box.w; ++x)
      acc += e.g[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  return acc;
}

void paste(Tensor& img, const Box& box, const Tensor& src, const Box& from, double alpha) {
  const std::size_t s = img.dim(1);
  auto px = img.mutable_data();
  for (std::size_t c = 0; c < 3; ++c)
    for (int y = 0; y < box.h; ++y)
      for (int x = 0; x < box.w; ++x) {
        const std::size_t i = (c * s + static_cast<std::size_t>(box.y + y)) * s +
                              static_cast<std::size_t>(box.x + x);
        const std::size_t j = (c * s + static_cast<std::size_t>(from.y + y)) * s +
                              static_cast<std::size_t>(from.x + x);
        px[i] = alpha * src[j] + (1.0 - alpha) * px[i];
      }
}

// Foreign smooth patch with a visible seam. Of up to 20 candidate fields, the
// one adding the most edge energy inside the box is kept.
void plant_blend(Tensor& img, const Box& box, Rng& rng, int size) {
  const double alpha = rng.uniform(0.75, 1.0);
  const Tensor base = img.detach();
  const double e0 = box_edge_energy(base, box);
  Tensor best;
  double best_gain = -std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 20; ++attempt) {
    const Tensor foreign = smooth_field(rng, size, false);
    if (mean_abs_diff(foreign, box, base, box) < 0.12) continue;
    Tensor cand = base.detach();
    paste(cand, box, foreign, box, alpha);
    const double gain = box_edge_energy(cand, box) - e0;
    if (gain > best_gain) best_gain = gain, best = std::move(cand);
  }
  if (!best.defined()) {  // every candidate too similar: take one anyway
    best = base.detach();
    paste(best, box, smooth_field(rng, size, false), box, alpha);
  }
  img = std::move(best);
}

// Copy of a disjoint region of the same image; among up to 30 placements the
// one adding the most edge energy inside the box is kept.
void plant_copy_move(Tensor& img, const Box& box, Rng& rng, int size) {
  const Tensor src = img.detach();
  const double e0 = box_edge_energy(src, box);
  Tensor best;
  double best_gain = -std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 30; ++attempt) {
    const Box from{rng.integer(0, size - box.w), rng.integer(0, size - box.h), box.w, box.h};
    if (!disjoint(from, box)) continue;
    Tensor cand = src.detach();
    paste(cand, box, src, from, 1.0);
    const double gain = box_edge_energy(cand, box) - e0;
    if (gain > best_gain) best_gain = gain, best = std::move(cand);
  }
  if (!best.defined()) {  // no disjoint placement found: take the far corner
    Box from = box;
    from.x = box.x + box.w <= size / 2 ? size - box.w : 0;
    from.y = box.y + box.h <= size / 2 ? size - box.h : 0;
    best = src.detach();
    paste(best, box, src, from, 1.0);
  }
  img = std::move(best);
}

void validate_size(int size, int patch_size) {
  if (size < 16 || patch_size <= 0 || size % patch_size != 0)
    throw ConfigurationError("image size " + std::to_string(size) +
                             " must be >= 16 and divisible by patch size " +
                             std::to_string(patch_size));
}

struct ClassSplitSizes {
  int train, val, test;
};

ClassSplitSizes class_split_sizes(int n, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigurationError("split fractions must be non-negative and sum to 1");
  const int train = static_cast<int>(std::lround(n * f.train));
  const int val = std::min(n - train, static_cast<int>(std::lround(n * f.val)));
  return {train, val, n - train - val};
}

// Assigns splits per class from a seeded shuffle of that class's positions.
void assign_splits(std::vector<LabeledImage>& images, std::uint64_t seed,
                   const SplitFractions& fractions, CorpusManifest& manifest) {
  for (int label : {kReal, kFake}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (images[i].label == label) idx.push_back(i);
    Rng rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(label + 1)));
    rng.shuffle(idx);
    const auto sz = class_split_sizes(static_cast<int>(idx.size()), fractions);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const int k = static_cast<int>(j);
      images[idx[j]].split = k < sz.train ? Split::kTrain
                             : k < sz.train + sz.val ? Split::kVal
                                                     : Split::kTest;
    }
  }
  manifest.splits.clear();
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    manifest.splits[split_name(s)] = {};
  for (const auto& im : images) {
    auto& counts = manifest.splits[split_name(im.split)];
    (im.label == kReal ? counts.real : counts.fake) += 1;
  }
}

std::string make_id(int label, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", label == kReal ? "real" : "fake", index);
  return buf;
}

}  // namespace

Tensor synthesize_real(Rng& rng, int size) {
  Tensor clean = smooth_field(rng, size, true);
  return finish(clean, noise_field(rng, clean.numel()));
}

FakeSample synthesize_fake(Rng& rng, int size, ArtifactKind kind) {
  Tensor clean = smooth_field(rng, size, true);
  const auto noise = noise_field(rng, clean.numel());
  const int lo = size / 4, hi = (3 * size) / 8;
  Box box{0, 0, rng.integer(lo, hi), rng.integer(lo, hi)};
  box.x = rng.integer(0, size - box.w);
  box.y = rng.integer(0, size - box.h);
  Tensor planted = clean.detach();
  switch (kind) {
    case ArtifactKind::kChecker: plant_checker(planted, box, rng); break;
    case ArtifactKind::kBlend: plant_blend(planted, box, rng, size); break;
    case ArtifactKind::kCopyMove: plant_copy_move(planted, box, rng, size); break;
    case ArtifactKind::kNone:
      throw ContractError("synthesize_fake: artifact kind required");
  }
  return {finish(clean, noise), finish(planted, noise), box, kind};
}

std::uint64_t image_seed(std::uint64_t corpus_seed, int label, int index) {
  // splitmix64 over (seed, label, index)
  std::uint64_t z = corpus_seed * 0x9E3779B97F4A7C15ull +
                    static_cast<std::uint64_t>(label) * 0xBF58476D1CE4E5B9ull +
                    static_cast<std::uint64_t>(index) + 0x94D049BB133111EBull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Corpus synth_generate(std::uint64_t seed, int n_per_class, int size, int patch_size,
                      SplitFractions fractions) {
  if (n_per_class < 2)
    throw ConfigurationError("n_per_class must be >= 2, got " +
                             std::to_string(n_per_class));
  validate_size(size, patch_size);
  Corpus corpus;
  corpus.manifest.seed = seed;
  corpus.manifest.n_per_class = n_per_class;
  corpus.manifest.image_size = size;
  constexpr ArtifactKind kinds[] = {ArtifactKind::kChecker, ArtifactKind::kBlend,
                                    ArtifactKind::kCopyMove};
  for (int i = 0; i < n_per_class; ++i) {
    Rng rng(image_seed(seed, kReal, i));
    LabeledImage im;
    im.pixels = synthesize_real(rng, size);
    im.label = kReal;
    im.id = make_id(kReal, i);
    corpus.images.push_back(std::move(im));
  }
  for (int i = 0; i < n_per_class; ++i) {
    Rng rng(image_seed(seed, kFake, i));
    FakeSample f = synthesize_fake(rng, size, kinds[i % 3]);
    LabeledImage im;
    im.pixels = std::move(f.after);
    im.label = kFake;
    im.artifact_bbox = f.bbox;
    im.artifact = f.kind;
    im.id = make_id(kFake, i);
    corpus.manifest.artifacts[artifact_name(f.kind)] += 1;
    corpus.images.push_back(std::move(im));
  }
  assign_splits(corpus.images, seed, fractions, corpus.manifest);
  return corpus;
}

std::string manifest_json(const Corpus& corpus) {
  const auto& m = corpus.manifest;
  json j;
  j["seed"] = m.seed;
  j["n_per_class"] = m.n_per_class;
  j["image_size"] = m.image_size;
  json splits = json::object();
  for (const auto& [name, c] : m.splits) splits[name] = {{"real", c.real}, {"fake", c.fake}};
  j["splits"] = splits;
  json arts = json::object();
  for (const auto& [name, c] : m.artifacts) arts[name] = c;
  j["artifacts"] = arts;
  json images = json::array();
  for (const auto& im : corpus.images) {
    json e{{"id", im.id},
           {"label", im.label},
           {"split", split_name(im.split)},
           {"artifact", artifact_name(im.artifact)}};
    if (im.artifact_bbox) {
      const Box& b = *im.artifact_bbox;
      e["bbox"] = {b.x, b.y, b.w, b.h};
    } else {
      e["bbox"] = nullptr;
    }
    images.push_back(std::move(e));
  }
  j["images"] = std::move(images);
  return j.dump(2);
}

void write_corpus(const Corpus& corpus, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "real", ec);
  fs::create_directories(root / "fake", ec);
  if (ec) throw IoError("cannot create corpus directories under " + root.string());
  for (const auto& im : corpus.images)
    write_pnm(root / (im.label == kReal ? "real" : "fake") / (im.id + ".ppm"), im.pixels);
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << manifest_json(corpus) << '\n';
}

namespace {

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  return files;
}

}  // namespace

Corpus load_dir(const fs::path& root, int size, std::uint64_t seed,
                SplitFractions fractions) {
  const fs::path real_dir = root / "real", fake_dir = root / "fake";
  for (const auto& d : {real_dir, fake_dir})
    if (!fs::is_directory(d))
      throw LayoutError("corpus root " + root.string() + " lacks subdirectory " +
                        d.filename().string() + "/");
  const auto reals = sorted_images(real_dir);
  const auto fakes = sorted_images(fake_dir);
  if (reals.empty() || fakes.empty())
    throw LayoutError("corpus root " + root.string() + " has an empty " +
                      (reals.empty() ? "real/" : "fake/") +
                      " directory; both classes are required");
  Corpus corpus;
  for (int label : {kReal, kFake})
    for (const auto& path : label == kReal ? reals : fakes) {
      Tensor px = read_pnm(path);
      if (px.dim(0) == 1) px = concat({px, px, px});
      if (px.dim(1) != static_cast<std::size_t>(size) ||
          px.dim(2) != static_cast<std::size_t>(size))
        px = bilinear_resize(px, static_cast<std::size_t>(size),
                             static_cast<std::size_t>(size));
      LabeledImage im;
      im.pixels = std::move(px);
      im.label = label;
      im.id = path.stem().string();
      corpus.images.push_back(std::move(im));
    }
  corpus.manifest.image_size = size;
  corpus.manifest.seed = seed;

  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) {
    corpus.manifest.n_per_class = static_cast<int>(std::min(reals.size(), fakes.size()));
    assign_splits(corpus.images, seed, fractions, corpus.manifest);
    return corpus;
  }
  std::ifstream in(manifest_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("cannot parse " + manifest_path.string() + ": " + e.what());
  }
  std::map<std::string, const json*> by_id;
  for (const auto& e : j.at("images")) by_id[e.at("id").get<std::string>()] = &e;
  corpus.manifest.seed = j.value("seed", seed);
  corpus.manifest.n_per_class = j.value("n_per_class", 0);
  for (auto& im : corpus.images) {
    auto it = by_id.find(im.id);
    if (it == by_id.end())
      throw FormatError("image " + im.id + " missing from " + manifest_path.string());
    const json& e = *it->second;
    im.split = parse_split(e.at("split").get<std::string>());
    im.artifact = parse_artifact(e.value("artifact", std::string("none")));
    if (e.contains("bbox") && !e.at("bbox").is_null()) {
      const auto b = e.at("bbox").get<std::vector<int>>();
      if (b.size() != 4) throw FormatError("bad bbox for " + im.id);
      // boxes are stored in the corpus' native resolution
      const int native = j.value("image_size", size);
      Box box{b[0], b[1], b[2], b[3]};
      if (native != size) {
        const double f = static_cast<double>(size) / native;
        box = {static_cast<int>(std::floor(box.x * f)), static_cast<int>(std::floor(box.y * f)),
               std::max(1, static_cast<int>(std::lround(box.w * f))),
               std::max(1, static_cast<int>(std::lround(box.h * f)))};
        box.w = std::min(box.w, size - box.x);
        box.h = std::min(box.h, size - box.y);
      }
      im.artifact_bbox = box;
    }
    if (im.label == kFake) corpus.manifest.artifacts[artifact_name(im.artifact)] += 1;
  }
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    corpus.manifest.splits[split_name(s)] = {};
  for (const auto& im : corpus.images) {
    auto& c = corpus.manifest.splits[split_name(im.split)];
    (im.label == kReal ? c.real : c.fake) += 1;
  }
  return corpus;
}

}  // namespace hfmf
