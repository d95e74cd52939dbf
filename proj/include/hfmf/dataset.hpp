#pragma once
// Procedural real/fake corpus with planted, localised artifacts, and a loader
// for corpora stored as real/ and fake/ directories of PGM/PPM files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hfmf/image.hpp"
#include "hfmf/rng.hpp"
#include "hfmf/tensor.hpp"

namespace hfmf {

inline constexpr int kReal = 0;
inline constexpr int kFake = 1;

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

enum class ArtifactKind { kNone, kChecker, kBlend, kCopyMove };
const char* artifact_name(ArtifactKind k);
ArtifactKind parse_artifact(const std::string& name);

struct LabeledImage {
  Tensor pixels;  // [3 x H x W] in [0, 1]
  int label = kReal;
  std::optional<Box> artifact_bbox;  // present iff synthetic fake
  std::string id;
  ArtifactKind artifact = ArtifactKind::kNone;
  Split split = Split::kTrain;
};

struct SplitCounts {
  int real = 0;
  int fake = 0;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  int n_per_class = 0;
  int image_size = 0;
  std::map<std::string, SplitCounts> splits;   // keyed by split name
  std::map<std::string, int> artifacts;        // fake count per artifact kind
};

struct Corpus {
  std::vector<LabeledImage> images;
  CorpusManifest manifest;

  std::vector<std::size_t> indices(Split split) const;
};

/// Split fractions; the remainder after train and val goes to test.
struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

/// A fake as planted: the clean image it started from and the result.
struct FakeSample {
  Tensor before;
  Tensor after;
  Box bbox;
  ArtifactKind kind = ArtifactKind::kNone;
};

/// Layered smooth field: per-channel base colour, linear gradient, Gaussian
/// blobs and mild pixel noise.
Tensor synthesize_real(Rng& rng, int size);
/// Real image plus one planted artifact of `kind`; `before` carries the same
/// noise so that the two differ only inside the box.
FakeSample synthesize_fake(Rng& rng, int size, ArtifactKind kind);

/// Per-image generator seed used by synth_generate.
std::uint64_t image_seed(std::uint64_t corpus_seed, int label, int index);

/// Balanced corpus: n_per_class reals and fakes, fake i carrying artifact
/// kind i mod 3, split 70/15/15 per class. Pure in (seed, n, size).
Corpus synth_generate(std::uint64_t seed, int n_per_class, int size,
                      int patch_size = 8, SplitFractions fractions = {});

/// Writes real/<id>.ppm, fake/<id>.ppm and manifest.json under `root`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& root);

/// Loads root/real and root/fake (PGM or PPM), resizing to `size` with
/// bilinear resampling. Order: real files, then fake files, each sorted
/// lexicographically. If root/manifest.json exists, splits, boxes and artifact
/// kinds come from it; otherwise splits are assigned per class from `seed`.
Corpus load_dir(const std::filesystem::path& root, int size,
                std::uint64_t seed = 0, SplitFractions fractions = {});

/// manifest.json contents (summary + per-image records).
std::string manifest_json(const Corpus& corpus);

}  // namespace hfmf
