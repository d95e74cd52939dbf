#include "hfmf/ensemble.hpp"

#include <iomanip>
#include <sstream>

namespace hfmf {

LabeledSet gather(const Corpus& corpus, std::span<const std::size_t> indices) {
  LabeledSet s;
  for (std::size_t i : indices) {
    const auto& img = corpus.images.at(i);
    s.x.push_back(img.pixels);
    s.y.push_back(img.label);
    s.ids.push_back(img.id);
  }
  return s;
}

EnsembleHead::EnsembleHead(const ModelDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  mlp_ = Mlp2(3, static_cast<std::size_t>(dims.ensemble_hidden), 2, rng);
}

Tensor EnsembleHead::logits(const EnsembleInput& input) const {
  const Tensor x({3}, {input.m1_calibrated_logit, input.m2_logits[0], input.m2_logits[1]});
  return mlp_(x);
}

ParamList EnsembleHead::parameters() const {
  ParamList out;
  mlp_.collect(out, "ensemble.mlp");
  return out;
}

EnsembleInput HfmfClassifier::ensemble_input(const Tensor& image) const {
  NoGradGuard guard;
  const Tensor a = m1_.logits(image);
  const Tensor b = m2_.logits(image);
  return {platt_log_odds(logit_margin({a[0], a[1]}), platt_), {b[0], b[1]}};
}

Tensor HfmfClassifier::logits(const Tensor& image) const {
  return head_.logits(ensemble_input(image));
}

std::vector<EnsembleInput> ensemble_inputs(const M1Model& m1, const M2Model& m2,
                                           const PlattParams& platt, const LabeledSet& set) {
  const auto a = predict_logits<Tensor>(m1, set.x);
  const auto b = predict_logits<Tensor>(m2, set.x);
  std::vector<EnsembleInput> out(set.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {platt_log_odds(logit_margin(a[i]), platt), b[i]};
  return out;
}

TrainHistory train_ensemble(EnsembleHead& head, const M1Model& m1, const M2Model& m2,
                            const PlattParams& platt, const LabeledSet& train,
                            const LabeledSet& val, const TrainConfig& config,
                            const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto tx = ensemble_inputs(m1, m2, platt, train);
  const auto vx = ensemble_inputs(m1, m2, platt, val);
  return train_module<EnsembleInput>(head, tx, train.y, vx, val.y, config, on_epoch);
}

std::vector<EvalSubset> evaluation_subsets(const Corpus& corpus) {
  const auto test = corpus.indices(Split::kTest);
  const ArtifactKind kinds[] = {ArtifactKind::kChecker, ArtifactKind::kBlend,
                                ArtifactKind::kCopyMove};
  std::vector<EvalSubset> out;
  for (const auto kind : kinds) out.push_back({artifact_name(kind), {}});
  std::size_t real_seen = 0;
  for (std::size_t i : test) {
    const auto& img = corpus.images[i];
    if (img.label == kReal) {
      out[real_seen++ % 3].indices.push_back(i);
    } else {
      for (std::size_t k = 0; k < 3; ++k)
        if (img.artifact == kinds[k]) out[k].indices.push_back(i);
    }
  }
  bool usable = true;
  for (const auto& s : out) {
    std::size_t fakes = 0;
    for (std::size_t i : s.indices) fakes += corpus.images[i].label == kFake;
    usable = usable && fakes > 0 && fakes < s.indices.size();
  }
  if (usable) return out;
  return {{"val", corpus.indices(Split::kVal)}, {"test", test}};
}

void AccuracyTable::add_row(std::string name, std::vector<double> values) {
  if (values.size() != columns.size())
    throw DimensionError("AccuracyTable: row '" + name + "' has " +
                         std::to_string(values.size()) + " values for " +
                         std::to_string(columns.size()) + " columns");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  rows.push_back({std::move(name), std::move(values), mean});
}

std::string AccuracyTable::text() const {
  std::size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::size_t col_w = 8;
  for (const auto& c : columns) col_w = std::max(col_w, c.size() + 2);
  std::ostringstream os;
  if (!title.empty()) os << title << '\n';
  os << std::left << std::setw(static_cast<int>(name_w)) << "method";
  for (const auto& c : columns) os << std::right << std::setw(static_cast<int>(col_w)) << c;
  os << std::right << std::setw(static_cast<int>(col_w)) << "mean" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name;
    for (double v : r.values) os << std::right << std::setw(static_cast<int>(col_w)) << v;
    os << std::right << std::setw(static_cast<int>(col_w)) << r.mean << '\n';
  }
  return os.str();
}

std::vector<double> subset_accuracies(const Model<Tensor>& model, const Corpus& corpus,
                                      const std::vector<EvalSubset>& subsets) {
  std::vector<double> out;
  for (const auto& s : subsets) {
    const LabeledSet set = gather(corpus, s.indices);
    out.push_back(evaluate(model, set.x, set.y).accuracy);
  }
  return out;
}

ComponentSeeds ComponentSeeds::from(std::uint64_t run_seed) {
  return {run_seed * 1000 + 1, run_seed * 1000 + 2, run_seed * 1000 + 3};
}

namespace {

std::function<void(const EpochRecord&)> epoch_logger(const std::string& what,
                                                     const ProgressFn& progress) {
  if (!progress) return {};
  return [what, progress](const EpochRecord& r) {
    std::ostringstream os;
    os << what << " epoch " << r.epoch << std::fixed << std::setprecision(4)
       << " train_loss " << r.train_loss << " train_acc " << r.train_acc << " val_loss "
       << r.val_loss << " val_acc " << r.val_acc;
    progress(os.str());
  };
}

}  // namespace

TrainHistory train_m1(M1Model& m1, const LabeledSet& train, const LabeledSet& val,
                      const TrainConfig& config, const ProgressFn& progress) {
  return train_module<Tensor>(m1, train.x, train.y, val.x, val.y, config,
                              epoch_logger(m1_variant_name(m1.variant()), progress));
}

TrainHistory train_m2(M2Model& m2, const LabeledSet& train, const LabeledSet& val,
                      const TrainConfig& config, const ProgressFn& progress) {
  return train_module<Tensor>(m2, train.x, train.y, val.x, val.y, config,
                              epoch_logger("m2[" + m2.mask().name() + "]", progress));
}

PlattParams calibrate_m1(const M1Model& m1, const LabeledSet& calibration) {
  const auto logits = predict_logits<Tensor>(m1, calibration.x);
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = logit_margin(logits[i]);
  return fit_platt(z, calibration.y);
}

AblationReport ablation_report(const Corpus& corpus, const ModelDims& dims,
                               const TrainConfig& config, TrainedPipeline& p,
                               const ProgressFn& progress) {
  const LabeledSet train = gather(corpus, Split::kTrain);
  const LabeledSet val = gather(corpus, Split::kVal);
  const auto subsets = evaluation_subsets(corpus);
  const auto seeds = ComponentSeeds::from(config.seed);
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };

  if (!p.m1) {
    say("training m1");
    p.m1.emplace(dims, seeds.m1);
    train_m1(*p.m1, train, val, config, progress);
  }
  if (!p.m2) {
    say("training m2");
    p.m2.emplace(dims, seeds.m2);
    train_m2(*p.m2, train, val, config, progress);
  }
  if (!p.platt) p.platt = calibrate_m1(*p.m1, val);
  if (!p.head) {
    say("training ensemble");
    p.head.emplace(dims, seeds.ensemble);
    train_ensemble(*p.head, *p.m1, *p.m2, *p.platt, train, val, config);
  }
  const HfmfClassifier hfmf(*p.m1, *p.m2, *p.platt, *p.head);
  const auto hfmf_acc = subset_accuracies(hfmf, corpus, subsets);

  AblationReport r;
  for (auto* t : {&r.m1_table, &r.m2_table})
    for (const auto& s : subsets) t->columns.push_back(s.name);
  r.m1_table.title = "Module 1 ablation";
  r.m2_table.title = "Module 2 ablation";

  for (const auto variant : {M1Variant::kVitOnly, M1Variant::kCnnOnly}) {
    say(std::string("training ") + m1_variant_name(variant));
    M1Model m(dims, seeds.m1, variant);
    train_m1(m, train, val, config, progress);
    r.m1_table.add_row(m1_variant_name(variant), subset_accuracies(m, corpus, subsets));
  }
  r.m1_table.add_row("m1", subset_accuracies(*p.m1, corpus, subsets));
  r.m1_table.add_row("hfmf", hfmf_acc);

  const StreamMask masks[] = {{false, true, true}, {true, true, false}, {true, false, true}};
  for (const auto& mask : masks) {
    say("training m2[" + mask.name() + "]");
    M2Model m(dims, seeds.m2, mask);
    train_m2(m, train, val, config, progress);
    r.m2_table.add_row(mask.name(), subset_accuracies(m, corpus, subsets));
  }
  r.m2_table.add_row("m2", subset_accuracies(*p.m2, corpus, subsets));
  r.m2_table.add_row("hfmf", hfmf_acc);
  return r;
}

}  // namespace hfmf
