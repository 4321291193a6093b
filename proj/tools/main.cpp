// dpseq: batch entry points for the tiling / training / scoring pipeline.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpseq/bench.hpp"
#include "dpseq/checkpoint.hpp"
#include "dpseq/dataset.hpp"
#include "dpseq/gradcheck.hpp"
#include "dpseq/metrics.hpp"
#include "dpseq/model.hpp"
#include "dpseq/preprocess.hpp"
#include "dpseq/stain.hpp"
#include "dpseq/tiling.hpp"
#include "dpseq/training.hpp"
#include "dpseq/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dpseq;

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 2;
constexpr int kRuntimeError = 3;
constexpr int kVerificationError = 4;

// thrown for bad user input; everything else during execution is a runtime error
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct CommonOpts {
  std::string config_path;
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t folds = 0;
  std::size_t bootstrap = 1000;
  json file;  // parsed --config contents, empty object when absent
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--manifest", o.manifest, "input manifest CSV");
  cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint path");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "master random seed");
  cmd->add_option("--threads", o.threads, "worker cap, recorded in outputs");
  cmd->add_option("--folds", o.folds, "cross-validation folds (0 disables CV)");
  cmd->add_option("--bootstrap", o.bootstrap, "bootstrap iterations");
}

// config-file values fill in whatever the command line left untouched
void resolve_common(CLI::App* cmd, CommonOpts& o) {
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ValidationError("cannot read config file '" + o.config_path + "'");
    try {
      in >> o.file;
    } catch (const json::exception& e) {
      throw ValidationError("config file '" + o.config_path + "' is not valid JSON: " + e.what());
    }
  } else {
    o.file = json::object();
  }
  auto fill = [&](const char* flag, const char* key, auto& slot) {
    if (cmd->count(flag) == 0 && o.file.contains(key)) o.file.at(key).get_to(slot);
  };
  fill("--manifest", "manifest", o.manifest);
  fill("--checkpoint", "checkpoint", o.checkpoint);
  fill("--out", "out", o.out);
  fill("--seed", "seed", o.seed);
  fill("--threads", "threads", o.threads);
  fill("--folds", "folds", o.folds);
  fill("--bootstrap", "bootstrap", o.bootstrap);
  if (o.out.empty()) throw ValidationError("missing required field: out (output directory)");
  fs::create_directories(o.out);
}

ModelConfig resolve_model_config(const CommonOpts& o) {
  if (o.file.contains("model")) return model_config_from_json(o.file.at("model").dump());
  return ModelConfig{};
}

TrainConfig resolve_train_config(const CommonOpts& o, bool phase2) {
  TrainConfig cfg;
  cfg.schedule = phase2 ? TrainConfig::Schedule::cosine : TrainConfig::Schedule::fixed;
  cfg.max_epochs = phase2 ? 50 : 2;
  cfg.seed = o.seed;
  if (o.file.contains("train")) {
    const json& t = o.file.at("train");
    if (t.contains("base_lr")) t.at("base_lr").get_to(cfg.base_lr);
    if (t.contains("max_epochs")) t.at("max_epochs").get_to(cfg.max_epochs);
    if (t.contains("patience")) t.at("patience").get_to(cfg.patience);
    if (t.contains("batch_size")) t.at("batch_size").get_to(cfg.batch_size);
    if (t.contains("dropout")) t.at("dropout").get_to(cfg.dropout);
    if (t.contains("class_weights")) t.at("class_weights").get_to(cfg.class_weights);
    if (t.contains("schedule")) {
      const std::string s = t.at("schedule").get<std::string>();
      if (s == "fixed") cfg.schedule = TrainConfig::Schedule::fixed;
      else if (s == "cosine") cfg.schedule = TrainConfig::Schedule::cosine;
      else throw ValidationError("train.schedule must be 'fixed' or 'cosine', got '" + s + "'");
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  return cfg;
}

json train_config_json(const TrainConfig& cfg) {
  return json{{"base_lr", cfg.base_lr},
              {"schedule", cfg.schedule == TrainConfig::Schedule::cosine ? "cosine" : "fixed"},
              {"max_epochs", cfg.max_epochs},
              {"patience", cfg.patience},
              {"batch_size", cfg.batch_size},
              {"dropout", cfg.dropout},
              {"class_weights", cfg.class_weights}};
}

// resolved-config snapshot: enough to replay the run
void write_snapshot(const CommonOpts& o, const std::string& subcommand, json extra = {}) {
  json snap{{"subcommand", subcommand}, {"manifest", o.manifest},  {"checkpoint", o.checkpoint},
            {"out", o.out},             {"seed", o.seed},          {"threads", o.threads},
            {"folds", o.folds},         {"bootstrap", o.bootstrap}};
  for (auto& [k, v] : extra.items()) snap[k] = v;
  std::ofstream out(fs::path(o.out) / "run_config.json");
  out << snap.dump(2) << '\n';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// ---- tile ---------------------------------------------------------------------

struct TileInput {
  std::string image_path;
  double mpp = 0.0;
  std::string patient_id;
};

// image_path,mpp[,patient_id]
std::vector<TileInput> read_tile_inputs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read input list '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("input list '" + path.string() + "' is empty");
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "image_path" || header[1] != "mpp")
    throw ValidationError("input list must start with header 'image_path,mpp[,patient_id]'");
  std::vector<TileInput> inputs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() < 2 || f[0].empty())
      throw ValidationError("input list line " + std::to_string(lineno) + ": missing image_path");
    if (f[1].empty())
      throw ValidationError("input list line " + std::to_string(lineno) + ": missing mpp for '" +
                            f[0] + "'");
    TileInput t;
    t.image_path = f[0];
    try {
      t.mpp = std::stod(f[1]);
    } catch (const std::exception&) {
      throw ValidationError("input list line " + std::to_string(lineno) + ": mpp '" + f[1] +
                            "' is not a number");
    }
    t.patient_id = f.size() > 2 && !f[2].empty() ? f[2] : fs::path(f[0]).stem().string();
    inputs.push_back(std::move(t));
  }
  return inputs;
}

int cmd_tile(CommonOpts& o, const std::string& stain_ref) {
  TileSpec spec;
  if (o.file.contains("tile")) {
    const json& t = o.file.at("tile");
    if (t.contains("tile_edge")) t.at("tile_edge").get_to(spec.tile_edge);
    if (t.contains("target_mpp")) t.at("target_mpp").get_to(spec.target_mpp);
    if (t.contains("model_edge")) t.at("model_edge").get_to(spec.model_edge);
  }
  try {
    spec.validate();
  } catch (const ImageError& e) {
    throw ValidationError(e.what());
  }

  std::optional<StainProfile> reference;
  if (!stain_ref.empty()) reference = load_stain_profile(stain_ref);

  write_snapshot(o, "tile",
                 json{{"tile", json{{"tile_edge", spec.tile_edge},
                                    {"target_mpp", spec.target_mpp},
                                    {"model_edge", spec.model_edge}}},
                      {"stain_ref", stain_ref}});

  if (o.manifest.empty()) throw ValidationError("missing required field: manifest (input list)");
  std::vector<TileInput> inputs = read_tile_inputs(o.manifest);
  const fs::path tiles_dir = fs::path(o.out) / "tiles";
  fs::create_directories(tiles_dir);

  TileManifest manifest;
  std::size_t skipped_normalization = 0;
  for (const TileInput& input : inputs) {
    ImageU8 image = read_image(input.image_path);
    std::vector<Tile> tiles = tessellate(image, input.mpp, spec);
    for (Tile& tile : tiles) {
      if (reference) {
        try {
          StainProfile src = estimate_stains(tile.image, reference->beta, reference->alpha);
          tile.image = macenko_normalize(tile.image, src, *reference);
        } catch (const InsufficientTissueError&) {
          ++skipped_normalization;  // background tile, keep unnormalized
        }
      }
      const std::string name = fs::path(input.image_path).stem().string() + "_r" +
                               std::to_string(tile.grid_row) + "_c" +
                               std::to_string(tile.grid_col) + ".png";
      write_image(tiles_dir / name, tile.image);
      manifest.rows.push_back({input.patient_id, "tiles/" + name, "", std::nullopt, std::nullopt,
                               ""});
    }
  }
  manifest.validate();
  write_manifest(fs::path(o.out) / "manifest.csv", manifest);

  if (inputs.empty()) std::cerr << "warning: empty input list, wrote an empty manifest\n";
  if (skipped_normalization)
    std::cerr << "warning: " << skipped_normalization
              << " tiles lacked tissue for stain normalization\n";
  std::cout << "images: " << inputs.size() << "\ntiles: " << manifest.rows.size() << '\n';
  return kOk;
}

// ---- training -----------------------------------------------------------------

std::size_t tissue_label(const ManifestRow& row) {
  for (std::size_t i = 0; i < kTissueClasses.size(); ++i)
    if (row.tissue_class == kTissueClasses[i]) return i;
  throw ValidationError("tile '" + row.tile_path + "' has unknown tissue class '" +
                        row.tissue_class + "'");
}

TileManifest load_manifest_checked(const CommonOpts& o) {
  if (o.manifest.empty()) throw ValidationError("missing required field: manifest");
  TileManifest m = read_manifest(o.manifest);
  m.validate();
  return m;
}

int cmd_tissue_train(CommonOpts& o) {
  ModelConfig model_cfg = resolve_model_config(o);
  model_cfg.n_classes = kTissueClasses.size();
  TrainConfig cfg = resolve_train_config(o, /*phase2=*/false);
  write_snapshot(o, "tissue-train",
                 json{{"model", json::parse(model_config_to_json(model_cfg))},
                      {"train", train_config_json(cfg)}});

  TileManifest manifest = load_manifest_checked(o);
  std::vector<ManifestRow> rows = rows_for_split(manifest, "train");
  if (rows.empty()) rows = manifest.rows;
  for (auto& r : rows) r.label = static_cast<int>(tissue_label(r));
  const fs::path base = fs::path(o.manifest).parent_path();
  ManifestTiles<float> train(rows, model_cfg, base);

  DpseqModel<float> model = o.checkpoint.empty() ? init_model<float>(model_cfg, o.seed)
                                                 : load_checkpoint<float>(o.checkpoint);
  TrainResult result = finetune_tissue(model, train, cfg);

  save_checkpoint(model, fs::path(o.out) / "best.ckpt");
  save_checkpoint(model, fs::path(o.out) / "last.ckpt");
  write_training_log(fs::path(o.out) / "training_log.csv", result.log);
  std::cout << "epochs: " << result.log.size()
            << "\nfinal train loss: " << fmt(result.log.back().train_loss) << '\n';
  return kOk;
}

int cmd_train(CommonOpts& o) {
  ModelConfig model_cfg = resolve_model_config(o);
  TrainConfig cfg = resolve_train_config(o, /*phase2=*/true);

  DpseqModel<float> model = [&] {
    if (o.checkpoint.empty()) {
      model_cfg.n_classes = 2;
      return init_model<float>(model_cfg, o.seed);
    }
    DpseqModel<float> m = load_checkpoint<float>(o.checkpoint);
    replace_head(m, 2, o.seed);
    return m;
  }();
  write_snapshot(o, "train",
                 json{{"model", json::parse(model_config_to_json(model.config))},
                      {"train", train_config_json(cfg)}});

  TileManifest manifest = load_manifest_checked(o);
  std::vector<ManifestRow> train_rows = rows_for_split(manifest, "train");
  std::vector<ManifestRow> val_rows = rows_for_split(manifest, "val");
  if (train_rows.empty() || val_rows.empty())
    throw ValidationError("manifest needs rows tagged split=train and split=val");
  const fs::path base = fs::path(o.manifest).parent_path();
  ManifestTiles<float> train(train_rows, model.config, base);
  ManifestTiles<float> val(val_rows, model.config, base);

  std::vector<std::vector<float>> last;
  TrainResult result = train_biomarker(model, train, val, cfg, &last);

  save_checkpoint(model, fs::path(o.out) / "best.ckpt");
  detail::restore(model, last);
  save_checkpoint(model, fs::path(o.out) / "last.ckpt");
  write_training_log(fs::path(o.out) / "training_log.csv", result.log);
  std::cout << "epochs: " << result.log.size() << "\nbest epoch: " << result.best_epoch
            << "\nbest val loss: " << fmt(result.log[result.best_epoch - 1].val_loss) << '\n';
  return kOk;
}

// ---- predict ------------------------------------------------------------------

int cmd_predict(CommonOpts& o) {
  if (o.checkpoint.empty()) throw ValidationError("missing required field: checkpoint");
  DpseqModel<float> model = load_checkpoint<float>(o.checkpoint);
  if (model.config.n_classes != 2)
    throw ValidationError("predict needs a 2-way head, checkpoint has " +
                          std::to_string(model.config.n_classes) + " classes");
  write_snapshot(o, "predict");

  TileManifest manifest = load_manifest_checked(o);
  const fs::path base = fs::path(o.manifest).parent_path();

  std::ofstream tile_out(fs::path(o.out) / "tile_scores.csv");
  tile_out << "patient_id,tile_path,score\n";
  std::ofstream err_out(fs::path(o.out) / "predict_errors.csv");
  err_out << "tile_path,error\n";

  struct Agg {
    std::vector<double> scores;
    std::optional<int> label;
  };
  std::map<std::string, Agg> patients;
  std::size_t failures = 0;
  for (const ManifestRow& row : manifest.rows) {
    fs::path tile_path(row.tile_path);
    if (!tile_path.is_absolute() && !base.empty()) tile_path = base / tile_path;
    double score;
    try {
      Tensor<float> tile = tile_to_tensor<float>(read_image(tile_path), model.config);
      score = static_cast<double>(softmax(forward(model, tile)).values()[1]);
    } catch (const std::exception& e) {
      ++failures;
      err_out << row.tile_path << ',' << e.what() << '\n';
      continue;
    }
    tile_out << row.patient_id << ',' << row.tile_path << ',' << fmt(score) << '\n';
    Agg& agg = patients[row.patient_id];
    agg.scores.push_back(score);
    if (row.label) agg.label = row.label;
  }

  std::ofstream patient_out(fs::path(o.out) / "patient_scores.csv");
  patient_out << "patient_id,score,label,n_tiles\n";
  for (const auto& [id, agg] : patients) {
    patient_out << id << ',' << fmt(aggregate_patient(agg.scores)) << ','
                << (agg.label ? std::to_string(*agg.label) : "") << ',' << agg.scores.size()
                << '\n';
  }

  if (manifest.rows.empty()) std::cerr << "warning: empty manifest, wrote empty outputs\n";
  std::cout << "tiles scored: " << manifest.rows.size() - failures
            << "\npatients: " << patients.size() << "\nfailures: " << failures << '\n';
  return failures ? kRuntimeError : kOk;
}

// ---- evaluate -----------------------------------------------------------------

struct PatientRow {
  std::string id;
  double score;
  int label;
};

std::vector<PatientRow> read_patient_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read patient scores '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).size() < 3 ||
      split_csv_line(line)[0] != "patient_id")
    throw ValidationError("patient scores must start with header 'patient_id,score,label[,...]'");
  std::vector<PatientRow> rows;
  std::vector<std::string> unlabeled;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() < 3)
      throw ValidationError("patient scores line " + std::to_string(lineno) + ": expected at "
                            "least 3 fields");
    if (f[2].empty()) {
      unlabeled.push_back(f[0]);
      continue;
    }
    rows.push_back({f[0], std::stod(f[1]), std::stoi(f[2])});
  }
  if (!unlabeled.empty()) {
    std::string ids;
    for (const auto& id : unlabeled) ids += (ids.empty() ? "" : ", ") + id;
    throw ValidationError("patients without labels: " + ids);
  }
  return rows;
}

void write_curve(const fs::path& path, const std::vector<CurvePoint>& curve, const char* header) {
  std::ofstream out(path);
  out << header << '\n';
  for (const CurvePoint& p : curve) out << fmt(p.x) << ',' << fmt(p.y) << '\n';
}

int cmd_evaluate(CommonOpts& o) {
  write_snapshot(o, "evaluate");
  if (o.manifest.empty()) throw ValidationError("missing required field: manifest");
  std::vector<PatientRow> rows = read_patient_scores(o.manifest);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const PatientRow& r : rows) {
    scores.push_back(r.score);
    labels.push_back(r.label);
  }

  json report;
  report["n_patients"] = rows.size();
  report["seed"] = o.seed;
  report["n_bootstrap"] = o.bootstrap;
  report["auroc"] = auroc(scores, labels);
  report["auprc"] = auprc(scores, labels);
  BootstrapCi roc_ci = bootstrap_ci(scores, labels, auroc, o.bootstrap,
                                    derive_seed(o.seed, "ci-auroc"));
  BootstrapCi pr_ci = bootstrap_ci(scores, labels, auprc, o.bootstrap,
                                   derive_seed(o.seed, "ci-auprc"));
  report["auroc_ci"] = {roc_ci.lo, roc_ci.hi};
  report["auprc_ci"] = {pr_ci.lo, pr_ci.hi};
  report["skipped_resamples"] = roc_ci.skipped + pr_ci.skipped;

  if (o.folds >= 2) {
    std::vector<std::pair<std::string, int>> patients;
    std::map<std::string, std::pair<double, int>> by_id;
    for (const PatientRow& r : rows) {
      patients.emplace_back(r.id, r.label);
      by_id[r.id] = {r.score, r.label};
    }
    std::vector<FoldSplit> folds = kfold_split(patients, o.folds, 0.15, o.seed);
    std::vector<double> fold_auroc, fold_auprc;
    json fold_rows = json::array();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<double> s;
      std::vector<int> y;
      for (const std::string& id : folds[f].test) {
        s.push_back(by_id[id].first);
        y.push_back(by_id[id].second);
      }
      fold_auroc.push_back(auroc(s, y));
      fold_auprc.push_back(auprc(s, y));
      fold_rows.push_back({{"fold", f},
                           {"n_test", folds[f].test.size()},
                           {"auroc", fold_auroc.back()},
                           {"auprc", fold_auprc.back()}});
    }
    MeanSd roc_ms = cv_summary(fold_auroc);
    MeanSd pr_ms = cv_summary(fold_auprc);
    report["folds"] = fold_rows;
    report["cv_auroc"] = {{"mean", roc_ms.mean}, {"sd", roc_ms.sd}};
    report["cv_auprc"] = {{"mean", pr_ms.mean}, {"sd", pr_ms.sd}};
  }

  std::ofstream out(fs::path(o.out) / "report.json");
  out << report.dump(2) << '\n';
  write_curve(fs::path(o.out) / "roc.csv", roc_curve(scores, labels), "fpr,tpr");
  write_curve(fs::path(o.out) / "pr.csv", pr_curve(scores, labels), "recall,precision");
  std::cout << "auroc: " << fmt(report["auroc"].get<double>())
            << "\nauprc: " << fmt(report["auprc"].get<double>()) << '\n';
  return kOk;
}

// ---- bench --------------------------------------------------------------------

int cmd_bench(CommonOpts& o) {
  if (o.checkpoint.empty()) throw ValidationError("missing required field: checkpoint");
  DpseqModel<float> model = load_checkpoint<float>(o.checkpoint);
  write_snapshot(o, "bench");

  TileManifest manifest = load_manifest_checked(o);
  const fs::path base = fs::path(o.manifest).parent_path();
  ManifestTiles<float> tiles(manifest.rows, model.config, base);

  TrainConfig cfg;
  cfg.seed = o.seed;
  cfg.dropout = false;
  BenchRecord rec = bench_model(model, tiles, tiles, cfg, o.threads);

  json out{{"train_seconds_per_epoch", rec.train_seconds_per_epoch},
           {"predict_seconds", rec.predict_seconds},
           {"n_train_tiles", rec.n_train_tiles},
           {"n_predict_tiles", rec.n_predict_tiles},
           {"param_count", rec.param_count},
           {"threads", rec.threads}};
  std::ofstream f(fs::path(o.out) / "bench.json");
  f << out.dump(2) << '\n';
  std::cout << out.dump(2) << '\n';
  return kOk;
}

// ---- gradcheck ----------------------------------------------------------------

int cmd_gradcheck(CommonOpts& o, bool corrupt) {
  write_snapshot(o, "gradcheck", json{{"corrupt", corrupt}});
  struct Row {
    std::string name;
    double max_rel_error;
  };
  std::vector<Row> table;
  // corruption hook: scaling the recorded loss leaves the finite-difference
  // re-evaluations untouched, so analytic gradients come out 1% off
  auto maybe_corrupt = [&](Tensor<double> loss, Tape<double>* tape) {
    return corrupt && tape ? scale(loss, 1.01, tape) : loss;
  };

  {
    Rng rng(derive_seed(o.seed, "gradcheck-bilstm2d"));
    BiLstm2dParams<double> p = init_bilstm2d<double>(8, 4, rng);
    std::vector<double> img(4 * 4 * 8), probe(4 * 4 * 8);
    for (auto& v : img) v = rng.uniform(-1.0, 1.0);
    for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
    Tensor<double> image({4, 4, 8}, img, true);
    Tensor<double> pr({4, 4, 8}, probe);
    std::vector<std::pair<std::string, Tensor<double>>> params{{"image", image}};
    visit_params(p, "p", [&](const std::string& n, Tensor<double>& t) { params.emplace_back(n, t); });
    auto report = gradient_check(
        params,
        [&](Tape<double>* tape) {
          return maybe_corrupt(sum_all(mul(bilstm2d_forward(image, p, tape), pr, tape), tape), tape);
        },
        1e-5, 16, o.seed);
    table.push_back({"bilstm2d", report.max_rel_error});
  }
  {
    Rng rng(derive_seed(o.seed, "gradcheck-block"));
    SequencerBlockParams<double> blk = init_sequencer_block<double>(6, 3, 2, rng);
    std::vector<double> img(3 * 3 * 6), probe(3 * 3 * 6);
    for (auto& v : img) v = rng.uniform(-1.0, 1.0);
    for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
    Tensor<double> x({3, 3, 6}, img, true);
    Tensor<double> pr({3, 3, 6}, probe);
    std::vector<std::pair<std::string, Tensor<double>>> params{{"x", x}};
    params.emplace_back("norm1.gamma", blk.norm1_gamma);
    params.emplace_back("mlp.fc1.W", blk.mlp_expand.weight);
    params.emplace_back("mlp.fc2.b", blk.mlp_contract.bias);
    auto report = gradient_check(
        params,
        [&](Tape<double>* tape) {
          return maybe_corrupt(sum_all(mul(sequencer_block(x, blk, tape), pr, tape), tape), tape);
        },
        1e-5, 16, o.seed);
    table.push_back({"block", report.max_rel_error});
  }
  {
    Rng rng(derive_seed(o.seed, "gradcheck-head"));
    LinearParams<double> fc1 = init_linear<double>(8, 5, rng);
    LinearParams<double> fc2 = init_linear<double>(5, 3, rng);
    std::vector<double> xv(2 * 8);
    for (auto& v : xv) v = rng.uniform(-1.0, 1.0);
    Tensor<double> x({2, 8}, xv, true);
    auto report = gradient_check(
        {{"x", x}, {"fc1.W", fc1.weight}, {"fc1.b", fc1.bias}, {"fc2.W", fc2.weight}},
        [&](Tape<double>* tape) {
          Tensor<double> h = relu(linear(x, fc1, tape), tape);
          return maybe_corrupt(mean_all(linear(h, fc2, tape), tape), tape);
        },
        1e-5, SIZE_MAX, o.seed);
    table.push_back({"head", report.max_rel_error});
  }
  {
    Rng rng(derive_seed(o.seed, "gradcheck-loss"));
    std::vector<double> lv(4 * 3);
    for (auto& v : lv) v = rng.uniform(-2.0, 2.0);
    Tensor<double> logits({4, 3}, lv, true);
    std::vector<std::size_t> labels{0, 2, 1, 2};
    std::vector<double> weights{0.5, 2.0, 1.0};
    auto report = gradient_check(
        {{"logits", logits}},
        [&](Tape<double>* tape) {
          return maybe_corrupt(weighted_cross_entropy(logits, labels, weights, tape), tape);
        },
        1e-5, SIZE_MAX, o.seed);
    table.push_back({"loss", report.max_rel_error});
  }

  bool all_pass = true;
  std::ostringstream report;
  report << "layer      max_rel_error  status\n";
  for (const Row& r : table) {
    const bool pass = r.max_rel_error < 1e-4;
    all_pass = all_pass && pass;
    report << r.name << std::string(11 - r.name.size(), ' ') << fmt(r.max_rel_error) << "  "
           << (pass ? "PASS" : "FAIL") << '\n';
  }
  std::cout << report.str();
  std::ofstream f(fs::path(o.out) / "gradcheck.txt");
  f << report.str();
  return all_pass ? kOk : kVerificationError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPSeq digital-pathology pipeline"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string stain_ref;
  bool corrupt = false;

  CLI::App* tile = app.add_subcommand("tile", "cut slides into model tiles");
  tile->add_option("--stain-ref", stain_ref, "reference stain profile for Macenko normalization");
  CLI::App* tissue = app.add_subcommand("tissue-train", "phase 1: tissue classifier fine-tune");
  CLI::App* train = app.add_subcommand("train", "phase 2: biomarker training");
  CLI::App* predict = app.add_subcommand("predict", "score tiles and aggregate per patient");
  CLI::App* evaluate = app.add_subcommand("evaluate", "metrics, bootstrap CIs, optional CV");
  CLI::App* bench = app.add_subcommand("bench", "timing and model-size record");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_flag("--corrupt", corrupt, "perturb analytic gradients (verification hook)")
      ->group("");
  for (CLI::App* cmd : {tile, tissue, train, predict, evaluate, bench, gradcheck})
    add_common(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidationError;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    resolve_common(cmd, o);
    if (cmd == tile) return cmd_tile(o, stain_ref);
    if (cmd == tissue) return cmd_tissue_train(o);
    if (cmd == train) return cmd_train(o);
    if (cmd == predict) return cmd_predict(o);
    if (cmd == evaluate) return cmd_evaluate(o);
    if (cmd == bench) return cmd_bench(o);
    if (cmd == gradcheck) return cmd_gradcheck(o, corrupt);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const ManifestError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kValidationError;
}
