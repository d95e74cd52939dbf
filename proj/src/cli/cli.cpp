#include "hfmf/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "hfmf/checkpoint.hpp"
#include "hfmf/ensemble.hpp"
#include "hfmf/errors.hpp"
#include "hfmf/explain.hpp"
#include "hfmf/run_config.hpp"
#include "json.hpp"

namespace hfmf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// Flags shared by every subcommand; empty / unset values defer to the config.
struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_data) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  f.seed_opt = cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--out", f.out, "output directory");
  if (with_data) cmd->add_option("--data", f.data, "corpus directory (real/, fake/)");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed_opt && f.seed_opt->count() > 0) c.train.seed = f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.data.empty()) c.data_dir = f.data;
  c.validate();
  return c;
}

SplitFractions fractions(const TrainConfig& t) { return {t.split_train, t.split_val, t.split_test}; }

Corpus open_corpus(const RunConfig& c) {
  return load_dir(c.data_dir, c.dims.image_size, c.train.seed, fractions(c.train));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"tp", m.tp},               {"fp", m.fp},
          {"tn", m.tn},             {"fn", m.fn}};
}

json history_json(const TrainHistory& h) {
  return {{"epochs_run", h.epochs.size()},
          {"best_epoch", h.best_epoch},
          {"stopped_early", h.stopped_early},
          {"best_val_loss", h.best().val_loss},
          {"best_val_acc", h.best().val_acc}};
}

json platt_json(const PlattParams& p) {
  return {{"A", p.A}, {"B", p.B}, {"final_nll", p.final_nll}, {"iterations", p.iterations}};
}

PlattParams load_platt(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing calibration file " + path.string());
  try {
    const json j = json::parse(read_text(path));
    return {j.at("A").get<double>(), j.at("B").get<double>(), j.at("final_nll").get<double>(),
            j.at("iterations").get<int>()};
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json table_json(const AccuracyTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back({{"name", r.name}, {"values", r.values}, {"mean", r.mean}});
  return {{"title", t.title}, {"columns", t.columns}, {"rows", rows}};
}

// Checkpoint I/O keyed by the run directory.
template <class M>
void save_model(const fs::path& path, const M& model, const RunConfig& c, const json& metrics) {
  save_checkpoint(path, make_checkpoint(model.parameters(), run_config_json(c), metrics.dump()));
}

Checkpoint require_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string());
  return load_checkpoint(path);
}

M1Model load_m1(const fs::path& path) {
  const Checkpoint ck = require_checkpoint(path);
  M1Model m(parse_run_config(ck.config_json).dims, 0);
  load_parameters(ck, m.parameters());
  return m;
}

M2Model load_m2(const fs::path& path) {
  const Checkpoint ck = require_checkpoint(path);
  M2Model m(parse_run_config(ck.config_json).dims, 0);
  load_parameters(ck, m.parameters());
  return m;
}

EnsembleHead load_head(const fs::path& path) {
  const Checkpoint ck = require_checkpoint(path);
  EnsembleHead h(parse_run_config(ck.config_json).dims, 0);
  load_parameters(ck, h.parameters());
  return h;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- synth

int cmd_synth(const CommonFlags& f, int n, int size, bool n_set, bool size_set, std::ostream& out) {
  RunConfig c = resolve(f);
  if (n_set) c.n_per_class = n;
  if (size_set) c.dims.image_size = size;
  if (f.out.empty() && f.data.empty() && c.data_dir.empty())
    throw ConfigurationError("synth: --out is required");
  const fs::path dest = f.out.empty() ? fs::path(c.data_dir) : fs::path(f.out);
  if (c.n_per_class < 2) throw ConfigurationError("--n must be >= 2");
  const Corpus corpus = synth_generate(c.train.seed, c.n_per_class, c.dims.image_size,
                                       c.dims.patch, fractions(c.train));
  write_corpus(corpus, dest);
  out << "wrote " << corpus.images.size() << " images and manifest.json to " << dest.string()
      << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonFlags& f, const std::string& module, std::ostream& out) {
  const RunConfig c = resolve(f);
  const auto t0 = Clock::now();
  const Corpus corpus = open_corpus(c);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", run_config_json(c) + "\n");

  const LabeledSet train = gather(corpus, Split::kTrain);
  const LabeledSet val = gather(corpus, Split::kVal);
  const auto seeds = ComponentSeeds::from(c.train.seed);
  const ProgressFn progress = [&out](const std::string& s) { out << s << '\n' << std::flush; };

  json metrics = json::object();
  const fs::path metrics_path = dir / "metrics.json";
  if (module != "all" && fs::exists(metrics_path)) metrics = json::parse(read_text(metrics_path));
  json timing = json::object();

  std::optional<M1Model> m1;
  std::optional<M2Model> m2;
  if (module == "all" || module == "m1") {
    const auto t = Clock::now();
    m1.emplace(c.dims, seeds.m1);
    const TrainHistory h = train_m1(*m1, train, val, c.train, progress);
    json mm = {{"val", metrics_json(evaluate<Tensor>(*m1, val.x, val.y))}, {"training", history_json(h)}};
    metrics["m1"] = mm;
    write_text(dir / "history_m1.csv", history_csv(h));
    save_model(dir / "m1.ckpt", *m1, c, mm);
    timing["m1_seconds"] = seconds_since(t);
  }
  if (module == "all" || module == "m2") {
    const auto t = Clock::now();
    m2.emplace(c.dims, seeds.m2);
    const TrainHistory h = train_m2(*m2, train, val, c.train, progress);
    json mm = {{"val", metrics_json(evaluate<Tensor>(*m2, val.x, val.y))}, {"training", history_json(h)}};
    metrics["m2"] = mm;
    write_text(dir / "history_m2.csv", history_csv(h));
    save_model(dir / "m2.ckpt", *m2, c, mm);
    timing["m2_seconds"] = seconds_since(t);
  }
  if (module == "all" || module == "ensemble") {
    const auto t = Clock::now();
    if (!m1) m1.emplace(load_m1(dir / "m1.ckpt"));
    if (!m2) m2.emplace(load_m2(dir / "m2.ckpt"));
    const PlattParams platt = calibrate_m1(*m1, val);
    write_text(dir / "platt.json", platt_json(platt).dump(2) + "\n");
    EnsembleHead head(c.dims, seeds.ensemble);
    const TrainHistory h = train_ensemble(head, *m1, *m2, platt, train, val, c.train,
                                          [&out](const EpochRecord& r) {
                                            out << "ensemble epoch " << r.epoch << " val_loss "
                                                << r.val_loss << " val_acc " << r.val_acc << '\n';
                                          });
    const HfmfClassifier hfmf(*m1, *m2, platt, head);
    json mm = {{"val", metrics_json(evaluate<Tensor>(hfmf, val.x, val.y))},
               {"training", history_json(h)},
               {"platt", platt_json(platt)}};
    metrics["hfmf"] = mm;
    write_text(dir / "history_ensemble.csv", history_csv(h));
    save_model(dir / "ensemble.ckpt", head, c, mm);
    timing["ensemble_seconds"] = seconds_since(t);
  }
  write_text(metrics_path, metrics.dump(2) + "\n");
  timing["total_seconds"] = seconds_since(t0);
  write_text(dir / "timing.json", timing.dump(2) + "\n");

  out << "final validation accuracy:";
  for (const char* key : {"m1", "m2", "hfmf"})
    if (metrics.contains(key))
      out << ' ' << key << '=' << std::fixed << std::setprecision(4)
          << metrics[key]["val"]["accuracy"].get<double>();
  out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const CommonFlags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const fs::path dir = c.out_dir;
  const M1Model m1 = load_m1(dir / "m1.ckpt");
  const M2Model m2 = load_m2(dir / "m2.ckpt");
  const EnsembleHead head = load_head(dir / "ensemble.ckpt");
  const PlattParams platt = load_platt(dir / "platt.json");
  const Corpus corpus = open_corpus(c);
  const HfmfClassifier hfmf(m1, m2, platt, head);

  const auto subsets = evaluation_subsets(corpus);
  AccuracyTable acc;
  acc.title = "Accuracy";
  for (const auto& s : subsets) acc.columns.push_back(s.name);
  const LabeledSet test = gather(corpus, Split::kTest);
  json rows = json::array();
  std::ostringstream prf;
  prf << "Test-split scores\n"
      << std::left << std::setw(8) << "method" << std::right << std::setw(10) << "acc"
      << std::setw(10) << "prec" << std::setw(10) << "rec" << std::setw(10) << "f1" << '\n'
      << std::fixed << std::setprecision(4);
  const std::pair<const char*, const Model<Tensor>*> models[] = {{"M1", &m1}, {"M2", &m2}, {"HFMF", &hfmf}};
  for (const auto& [name, model] : models) {
    acc.add_row(name, subset_accuracies(*model, corpus, subsets));
    const Metrics m = evaluate(*model, test.x, test.y);
    rows.push_back({{"name", name},
                    {"values", acc.rows.back().values},
                    {"mean", acc.rows.back().mean},
                    {"test", metrics_json(m)}});
    prf << std::left << std::setw(8) << name << std::right << std::setw(10) << m.accuracy
        << std::setw(10) << m.precision << std::setw(10) << m.recall << std::setw(10) << m.f1
        << '\n';
  }
  const json report = {{"columns", acc.columns}, {"rows", rows}};
  const std::string text = acc.text() + "\n" + prf.str();
  write_text(dir / "eval.json", report.dump(2) + "\n");
  write_text(dir / "eval.txt", text);
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------- calibrate

struct ScoredSet {
  std::string name;
  std::vector<double> z;
  std::vector<int> y;
};

std::vector<ScoredSet> read_logits_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open logits file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty logits file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "logit,label")
    throw FormatError(path.string() + ": header must be 'logit,label'");
  ScoredSet s{"file", {}, {}};
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      std::size_t used = 0;
      const double z = std::stod(line.substr(0, comma), &used);
      const int y = std::stoi(line.substr(comma + 1));
      if ((y != 0 && y != 1) || !std::isfinite(z)) throw std::invalid_argument("range");
      s.z.push_back(z);
      s.y.push_back(y);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row " + std::to_string(row));
    }
  }
  return {s};
}

int cmd_calibrate(const CommonFlags& f, int bins, bool bins_set, const std::string& logits_file,
                  std::ostream& out) {
  RunConfig c = resolve(f);
  if (bins_set) c.n_bins = bins;
  if (c.n_bins < 1) throw ConfigurationError("--bins must be >= 1");
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);

  std::vector<ScoredSet> sets;
  PlattParams platt;
  if (!logits_file.empty()) {
    sets = read_logits_file(logits_file);
    platt = fit_platt(sets[0].z, sets[0].y);
  } else {
    const M1Model m1 = load_m1(dir / "m1.ckpt");
    const Corpus corpus = open_corpus(c);
    for (const Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      const LabeledSet set = gather(corpus, s);
      ScoredSet scored{split_name(s), {}, set.y};
      for (const auto& l : predict_logits<Tensor>(m1, set.x)) scored.z.push_back(logit_margin(l));
      sets.push_back(std::move(scored));
    }
    platt = fit_platt(sets[1].z, sets[1].y);
    write_text(dir / "platt.json", platt_json(platt).dump(2) + "\n");
  }
  const double identity_nll =
      platt_nll(logits_file.empty() ? sets[1].z : sets[0].z,
                logits_file.empty() ? sets[1].y : sets[0].y, 1.0, 0.0);

  json rows = json::array();
  std::ostringstream text;
  text << "Calibration (" << c.n_bins << " bins), A=" << platt.A << " B=" << platt.B << '\n'
       << std::left << std::setw(10) << "dataset" << std::right << std::setw(14) << "ece_uncal"
       << std::setw(14) << "ece_cal" << std::setw(14) << "pct_decrease" << '\n';
  for (const auto& s : sets) {
    std::vector<double> p_uncal, p_cal;
    std::ostringstream probs;
    probs.precision(17);
    probs << "logit,label,p_uncal,p_cal\n";
    for (std::size_t i = 0; i < s.z.size(); ++i) {
      p_uncal.push_back(apply_platt(s.z[i], PlattParams{}));
      p_cal.push_back(apply_platt(s.z[i], platt));
      probs << s.z[i] << ',' << s.y[i] << ',' << p_uncal.back() << ',' << p_cal.back() << '\n';
    }
    const ReliabilityTable tu = reliability_table(p_uncal, s.y, c.n_bins);
    const ReliabilityTable tc = reliability_table(p_cal, s.y, c.n_bins);
    const double eu = tu.ece(), ec = tc.ece();
    const double pct = eu > 0.0 ? (eu - ec) / eu * 100.0 : 0.0;
    write_text(dir / ("reliability_" + s.name + "_uncal.csv"), reliability_csv(tu));
    write_text(dir / ("reliability_" + s.name + "_cal.csv"), reliability_csv(tc));
    write_text(dir / ("probabilities_" + s.name + ".csv"), probs.str());
    rows.push_back({{"dataset", s.name}, {"ece_uncal", eu}, {"ece_cal", ec}, {"pct_decrease", pct}});
    text << std::left << std::setw(10) << s.name << std::right << std::fixed
         << std::setprecision(6) << std::setw(14) << eu << std::setw(14) << ec
         << std::setprecision(2) << std::setw(14) << pct << '\n';
    text.unsetf(std::ios::fixed);
  }
  const json report = {{"n_bins", c.n_bins},
                       {"fit_split", logits_file.empty() ? "val" : "file"},
                       {"platt", platt_json(platt)},
                       {"identity_nll", identity_nll},
                       {"rows", rows}};
  write_text(dir / "calibration.json", report.dump(2) + "\n");
  write_text(dir / "calibration.txt", text.str());
  out << text.str();
  return kExitOk;
}

// ---------------------------------------------------------------- explain

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> ids;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) ids.push_back(item);
  return ids;
}

json box_json(const Box& b) { return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

int cmd_explain(const CommonFlags& f, const std::string& ids_flag, bool dump_regions,
                std::ostream& out) {
  const RunConfig c = resolve(f);
  const fs::path dir = c.out_dir;
  const M2Model m2 = load_m2(dir / "m2.ckpt");
  const Corpus corpus = open_corpus(c);

  std::vector<std::size_t> chosen;
  if (ids_flag.empty()) {
    for (std::size_t i : corpus.indices(Split::kVal))
      if (corpus.images[i].label == kFake) chosen.push_back(i);
  } else {
    for (const auto& id : split_ids(ids_flag)) {
      const auto it = std::find_if(corpus.images.begin(), corpus.images.end(),
                                   [&](const LabeledImage& im) { return im.id == id; });
      if (it == corpus.images.end()) throw ConfigurationError("unknown image id '" + id + "'");
      chosen.push_back(static_cast<std::size_t>(it - corpus.images.begin()));
    }
  }
  const fs::path heat_dir = dir / "heatmaps";
  fs::create_directories(heat_dir);
  Rng rng(c.train.seed ^ 0x62617365ULL);
  std::ostringstream csv;
  csv.precision(17);
  csv << "id,artifact,overlap,baseline\n";
  double sum_o = 0.0, sum_b = 0.0, min_value = 0.0;
  std::size_t scored = 0;
  json regions = json::array();
  for (std::size_t i : chosen) {
    const auto& img = corpus.images[i];
    const Heatmap h = gradcam(m2, img.pixels, kFake);
    for (double v : h.upsampled.data()) min_value = std::min(min_value, v);
    export_heatmap(h, heat_dir / (img.id + "_class1.pgm"));
    if (dump_regions) {
      const RegionSet rs = region_extract(img.pixels, {.k_context = c.dims.k_context});
      json ctx = json::array();
      for (const auto& b : rs.context_regions) ctx.push_back(box_json(b));
      regions.push_back({{"id", img.id},
                         {"primary", box_json(rs.primary_region)},
                         {"context", ctx},
                         {"scores", rs.saliency_scores}});
    }
    if (img.label != kFake || !img.artifact_bbox) continue;
    const Box& b = *img.artifact_bbox;
    const double o = overlap_score(h, b);
    const double base = random_box_baseline(h.upsampled, b.w, b.h, 100, rng);
    csv << img.id << ',' << artifact_name(img.artifact) << ',' << o << ',' << base << '\n';
    sum_o += o;
    sum_b += base;
    ++scored;
  }
  write_text(dir / "overlap.csv", csv.str());
  if (dump_regions) write_text(dir / "regions.json", regions.dump(2) + "\n");
  const double mo = scored ? sum_o / static_cast<double>(scored) : 0.0;
  const double mb = scored ? sum_b / static_cast<double>(scored) : 0.0;
  const json summary = {{"heatmaps", chosen.size()},
                        {"scored", scored},
                        {"mean_overlap", mo},
                        {"mean_baseline", mb},
                        {"min_heatmap_value", min_value}};
  write_text(dir / "explain.json", summary.dump(2) + "\n");
  out << "wrote " << chosen.size() << " heatmaps to " << heat_dir.string() << '\n'
      << "mean overlap " << mo << " vs random-box baseline " << mb << " over " << scored
      << " fakes\n";
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const CommonFlags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  const Corpus corpus = open_corpus(c);
  TrainedPipeline p;
  if (fs::exists(dir / "m1.ckpt")) p.m1.emplace(load_m1(dir / "m1.ckpt"));
  if (fs::exists(dir / "m2.ckpt")) p.m2.emplace(load_m2(dir / "m2.ckpt"));
  if (p.m1 && p.m2 && fs::exists(dir / "platt.json") && fs::exists(dir / "ensemble.ckpt")) {
    p.platt = load_platt(dir / "platt.json");
    p.head.emplace(load_head(dir / "ensemble.ckpt"));
  }
  const AblationReport r = ablation_report(corpus, c.dims, c.train, p,
                                           [&out](const std::string& s) { out << s << '\n' << std::flush; });
  const json report = {{"m1", table_json(r.m1_table)}, {"m2", table_json(r.m2_table)}};
  const std::string text = r.m1_table.text() + "\n" + r.m2_table.text();
  write_text(dir / "ablation.json", report.dump(2) + "\n");
  write_text(dir / "ablation.txt", text);
  out << text;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical-fusion / multi-stream deepfake detector (desk scale)", "hfmf"};
  app.require_subcommand(1);

  CommonFlags synth_f, train_f, eval_f, cal_f, explain_f, ablate_f;
  int n = 0, size = 0, bins = 15;
  std::string module = "all", logits_file, ids;
  bool regions = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_common(synth, synth_f, false);
  auto* n_opt = synth->add_option("--n", n, "images per class");
  auto* size_opt = synth->add_option("--size", size, "image side in pixels");

  auto* train = app.add_subcommand("train", "train M1, M2, calibration and the ensemble");
  add_common(train, train_f, true);
  train->add_option("--module", module, "all|m1|m2|ensemble")
      ->check(CLI::IsMember({"all", "m1", "m2", "ensemble"}));

  auto* eval = app.add_subcommand("eval", "accuracy report for M1, M2 and HFMF");
  add_common(eval, eval_f, true);

  auto* cal = app.add_subcommand("calibrate", "Platt-scale M1 and report ECE");
  add_common(cal, cal_f, true);
  auto* bins_opt = cal->add_option("--bins", bins, "ECE bins (default 15)");
  cal->add_option("--logits-file", logits_file, "CSV with header logit,label")
      ->check(CLI::ExistingFile);

  auto* explain = app.add_subcommand("explain", "Grad-CAM heatmaps and overlap scores");
  add_common(explain, explain_f, true);
  explain->add_option("--ids", ids, "comma-separated image ids (default: fake validation images)");
  explain->add_flag("--regions", regions, "also write regions.json with proposed boxes");

  auto* ablate = app.add_subcommand("ablate", "ablation tables for both modules");
  add_common(ablate, ablate_f, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_f, n, size, n_opt->count() > 0, size_opt->count() > 0, out);
    if (train->parsed()) return cmd_train(train_f, module, out);
    if (eval->parsed()) return cmd_eval(eval_f, out);
    if (cal->parsed()) return cmd_calibrate(cal_f, bins, bins_opt->count() > 0, logits_file, out);
    if (explain->parsed()) return cmd_explain(explain_f, ids, regions, out);
    if (ablate->parsed()) return cmd_ablate(ablate_f, out);
  } catch (const ConfigurationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace hfmf
