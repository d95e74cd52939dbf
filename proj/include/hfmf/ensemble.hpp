#pragma once
// The stacking ensemble over calibrated M1 and raw M2 outputs, labelled-set
// plumbing, evaluation subsets and the ablation tables.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hfmf/calibration.hpp"
#include "hfmf/dataset.hpp"
#include "hfmf/fusion.hpp"
#include "hfmf/streams.hpp"
#include "hfmf/training.hpp"

namespace hfmf {

struct LabeledSet {
  std::vector<Tensor> x;
  std::vector<int> y;
  std::vector<std::string> ids;

  std::size_t size() const { return x.size(); }
};

LabeledSet gather(const Corpus& corpus, std::span<const std::size_t> indices);
inline LabeledSet gather(const Corpus& corpus, Split split) {
  const auto idx = corpus.indices(split);
  return gather(corpus, idx);
}

/// Scalar M1 score z = logit_fake - logit_real.
inline double logit_margin(const std::array<double, 2>& logits) { return logits[1] - logits[0]; }

struct EnsembleInput {
  double m1_calibrated_logit = 0.0;  // log-odds of the Platt-calibrated probability
  std::array<double, 2> m2_logits{};
};

/// [m1_calibrated_logit, m2_logits[0], m2_logits[1]] -> MLP -> 2 logits.
class EnsembleHead : public Model<EnsembleInput> {
 public:
  EnsembleHead(const ModelDims& dims, std::uint64_t seed);
  Tensor logits(const EnsembleInput& input) const override;
  ParamList parameters() const override;
  Mlp2& mlp() { return mlp_; }

 private:
  Mlp2 mlp_;
};

/// Frozen M1 + Platt + M2 + ensemble head, as one image classifier. Gradients
/// never reach the submodels.
class HfmfClassifier : public Model<Tensor> {
 public:
  HfmfClassifier(const M1Model& m1, const M2Model& m2, const PlattParams& platt,
                 const EnsembleHead& head)
      : m1_(m1), m2_(m2), platt_(platt), head_(head) {}
  EnsembleInput ensemble_input(const Tensor& image) const;
  Tensor logits(const Tensor& image) const override;
  ParamList parameters() const override { return head_.parameters(); }

 private:
  const M1Model& m1_;
  const M2Model& m2_;
  PlattParams platt_;
  const EnsembleHead& head_;
};

/// Ensemble inputs for a whole set (submodels evaluated without the tape).
std::vector<EnsembleInput> ensemble_inputs(const M1Model& m1, const M2Model& m2,
                                           const PlattParams& platt, const LabeledSet& set);

/// Trains only `head`; m1, m2 and platt are read-only.
TrainHistory train_ensemble(EnsembleHead& head, const M1Model& m1, const M2Model& m2,
                            const PlattParams& platt, const LabeledSet& train,
                            const LabeledSet& val, const TrainConfig& config,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

/// A named group of corpus indices used as one report column.
struct EvalSubset {
  std::string name;
  std::vector<std::size_t> indices;
};

/// Report columns. For corpora with artifact kinds: one column per kind
/// holding the test fakes of that kind plus a disjoint third of the test
/// reals. Otherwise: the validation and test splits.
std::vector<EvalSubset> evaluation_subsets(const Corpus& corpus);

struct AccuracyRow {
  std::string name;
  std::vector<double> values;  // one per column
  double mean = 0.0;           // arithmetic mean of values
};

struct AccuracyTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<AccuracyRow> rows;

  void add_row(std::string name, std::vector<double> values);
  /// Aligned plain text.
  std::string text() const;
};

/// Accuracy of `model` on each subset.
std::vector<double> subset_accuracies(const Model<Tensor>& model, const Corpus& corpus,
                                      const std::vector<EvalSubset>& subsets);

/// Fully trained pipeline pieces.
struct TrainedPipeline {
  std::optional<M1Model> m1;
  std::optional<M2Model> m2;
  std::optional<PlattParams> platt;
  std::optional<EnsembleHead> head;
};

struct AblationReport {
  AccuracyTable m1_table;  // vit_only, cnn_only, m1, hfmf
  AccuracyTable m2_table;  // global+sobel, region+sobel, region+global, m2, hfmf
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates every ablation variant. Pieces already present in
/// `pipeline` are reused; missing ones are trained and stored back into it.
AblationReport ablation_report(const Corpus& corpus, const ModelDims& dims,
                               const TrainConfig& config, TrainedPipeline& pipeline,
                               const ProgressFn& progress = {});

/// Seeds used for each trained component, derived from the run seed.
struct ComponentSeeds {
  std::uint64_t m1, m2, ensemble;
  static ComponentSeeds from(std::uint64_t run_seed);
};

/// Trains M1 on train, early-stopped on val.
TrainHistory train_m1(M1Model& m1, const LabeledSet& train, const LabeledSet& val,
                      const TrainConfig& config, const ProgressFn& progress = {});
TrainHistory train_m2(M2Model& m2, const LabeledSet& train, const LabeledSet& val,
                      const TrainConfig& config, const ProgressFn& progress = {});
/// Platt fit on M1 margins over `calibration` (the validation split).
PlattParams calibrate_m1(const M1Model& m1, const LabeledSet& calibration);

}  // namespace hfmf
