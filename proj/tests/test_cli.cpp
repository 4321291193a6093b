#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpseq/image.hpp"
#include "dpseq/manifest.hpp"
#include "dpseq/rng.hpp"

using namespace dpseq;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DPSEQ_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

// training log minus the wall-clock column
std::string log_without_timing(const fs::path& p) {
  std::ifstream in(p);
  std::string out, line;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("dpseq_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  fs::path operator/(const std::string& p) const { return dir / p; }
};

ImageU8 noisy_image(std::size_t edge, double level, std::uint64_t seed) {
  ImageU8 img(edge, edge);
  Rng rng(seed);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(std::clamp(level + rng.uniform(-20.0, 20.0), 0.0, 255.0));
  return img;
}

void write_tiny_config(const fs::path& path, int max_epochs) {
  std::ofstream out(path);
  out << R"({"model": {"depths":[1,1,1,1], "embed_dims":[8,8,8,8], "hidden_dims":[4,4,4,4],
"downsample":[false,false,false], "patch_edge":2, "image_edge":8, "head_dims":[8,4],
"n_classes":2, "mlp_ratio":2, "dropout":0.0, "norm_mean":[0.5,0.5,0.5], "norm_std":[0.5,0.5,0.5]},
"train": {"base_lr": 2e-3, "max_epochs": )"
      << max_epochs << R"(, "patience": 8, "batch_size": 8, "dropout": false}})";
}

// 12 patients, 4 tiles each, two well-separated intensity classes
fs::path write_biomarker_fixture(const Workspace& ws) {
  TileManifest manifest;
  std::uint64_t seed = 0;
  for (int p = 0; p < 12; ++p) {
    const int label = p % 2;
    const std::string split = p < 8 ? "train" : (p < 10 ? "val" : "test");
    for (int t = 0; t < 4; ++t) {
      const std::string name = "tile_p" + std::to_string(p) + "_" + std::to_string(t) + ".png";
      write_image(ws / name, noisy_image(16, label ? 170.0 : 80.0, ++seed));
      manifest.rows.push_back({"BP" + std::to_string(p), name, "", std::nullopt, label, split});
    }
  }
  const fs::path path = ws / "biomarker.csv";
  write_manifest(path, manifest);
  return path;
}

}  // namespace

TEST_CASE("tile command cuts, manifests, and is idempotent") {
  Workspace ws;
  write_image(ws / "slide0.png", noisy_image(1024, 120.0, 1));
  write_image(ws / "slide1.png", noisy_image(1024, 140.0, 2));
  {
    std::ofstream in(ws / "inputs.csv");
    in << "image_path,mpp,patient_id\n"
       << (ws / "slide0.png").string() << ",0.5,PAT0\n"
       << (ws / "slide1.png").string() << ",0.5,PAT1\n";
  }

  REQUIRE(run("tile --manifest " + (ws / "inputs.csv").string() + " --out " +
              (ws / "tiled").string()) == 0);
  TileManifest m = read_manifest(ws / "tiled" / "manifest.csv");
  CHECK(m.rows.size() == 8);  // two 1024^2 slides at 0.5 MPP, 512-px tiles
  std::size_t written = 0;
  for (const auto& e : fs::directory_iterator(ws / "tiled" / "tiles")) {
    CHECK(e.path().extension() == ".png");
    ++written;
  }
  CHECK(written == 8);
  CHECK(fs::exists(ws / "tiled" / "run_config.json"));

  // rerun reproduces the manifest byte for byte
  const std::string first = slurp(ws / "tiled" / "manifest.csv");
  REQUIRE(run("tile --manifest " + (ws / "inputs.csv").string() + " --out " +
              (ws / "tiled2").string()) == 0);
  CHECK(slurp(ws / "tiled2" / "manifest.csv") == first);

  // empty input list: success with an empty manifest
  {
    std::ofstream in(ws / "none.csv");
    in << "image_path,mpp,patient_id\n";
  }
  CHECK(run("tile --manifest " + (ws / "none.csv").string() + " --out " +
            (ws / "tiled3").string()) == 0);
  CHECK(read_manifest(ws / "tiled3" / "manifest.csv").rows.empty());

  // missing mpp names the field; unreadable image is a runtime error
  {
    std::ofstream in(ws / "bad.csv");
    in << "image_path,mpp,patient_id\nslide.png,,PAT\n";
  }
  CHECK(run("tile --manifest " + (ws / "bad.csv").string() + " --out " +
            (ws / "tiled4").string()) == 2);
  {
    std::ofstream in(ws / "gone.csv");
    in << "image_path,mpp,patient_id\n" << (ws / "missing.png").string() << ",0.5,PAT\n";
  }
  CHECK(run("tile --manifest " + (ws / "gone.csv").string() + " --out " +
            (ws / "tiled5").string()) == 3);
}

TEST_CASE("train command is seeded and reproducible") {
  Workspace ws;
  write_tiny_config(ws / "cfg.json", 4);
  const fs::path manifest = write_biomarker_fixture(ws);

  const std::string base = "train --config " + (ws / "cfg.json").string() + " --manifest " +
                           manifest.string() + " --seed 11 --out ";
  REQUIRE(run(base + (ws / "runA").string()) == 0);
  REQUIRE(run(base + (ws / "runB").string()) == 0);

  CHECK(fs::exists(ws / "runA" / "best.ckpt"));
  CHECK(fs::exists(ws / "runA" / "last.ckpt"));
  CHECK(slurp(ws / "runA" / "best.ckpt") == slurp(ws / "runB" / "best.ckpt"));
  CHECK(log_without_timing(ws / "runA" / "training_log.csv") ==
        log_without_timing(ws / "runB" / "training_log.csv"));

  // a different seed diverges
  REQUIRE(run("train --config " + (ws / "cfg.json").string() + " --manifest " + manifest.string() +
              " --seed 12 --out " + (ws / "runC").string()) == 0);
  CHECK(slurp(ws / "runC" / "best.ckpt") != slurp(ws / "runA" / "best.ckpt"));

  // missing manifest is a validation error
  CHECK(run("train --config " + (ws / "cfg.json").string() + " --out " +
            (ws / "runD").string()) == 2);
}

TEST_CASE("predict aggregates per patient and survives missing tiles") {
  Workspace ws;
  write_tiny_config(ws / "cfg.json", 4);
  const fs::path manifest = write_biomarker_fixture(ws);
  REQUIRE(run("train --config " + (ws / "cfg.json").string() + " --manifest " + manifest.string() +
              " --seed 11 --out " + (ws / "run").string()) == 0);

  REQUIRE(run("predict --checkpoint " + (ws / "run" / "best.ckpt").string() + " --manifest " +
              manifest.string() + " --out " + (ws / "pred").string()) == 0);

  // tile row count matches the manifest; patient scores are the tile means
  std::ifstream tiles(ws / "pred" / "tile_scores.csv");
  std::string line;
  std::getline(tiles, line);
  CHECK(line == "patient_id,tile_path,score");
  std::map<std::string, std::pair<double, int>> sums;
  std::size_t rows = 0;
  while (std::getline(tiles, line)) {
    ++rows;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    auto& [sum, n] = sums[line.substr(0, c1)];
    sum += std::stod(line.substr(c2 + 1));
    ++n;
  }
  CHECK(rows == 48);

  std::ifstream patients(ws / "pred" / "patient_scores.csv");
  std::getline(patients, line);
  CHECK(line == "patient_id,score,label,n_tiles");
  std::size_t patient_rows = 0;
  while (std::getline(patients, line)) {
    ++patient_rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 4);
    const auto& [sum, n] = sums.at(f[0]);
    CHECK(std::stod(f[1]) == doctest::Approx(sum / n).epsilon(1e-8));
    CHECK(std::stoul(f[3]) == static_cast<std::size_t>(n));
  }
  CHECK(patient_rows == 12);

  // deleting one tile: nonzero exit, error report, remaining rows still scored
  fs::remove(ws / "tile_p0_0.png");
  CHECK(run("predict --checkpoint " + (ws / "run" / "best.ckpt").string() + " --manifest " +
            manifest.string() + " --out " + (ws / "pred2").string()) == 3);
  CHECK(slurp(ws / "pred2" / "predict_errors.csv").find("tile_p0_0.png") != std::string::npos);
  std::ifstream tiles2(ws / "pred2" / "tile_scores.csv");
  std::size_t rows2 = 0;
  while (std::getline(tiles2, line)) ++rows2;
  CHECK(rows2 == 48);  // header + 47 scored tiles
}

TEST_CASE("evaluate reports metrics, CIs, and CV deterministically") {
  Workspace ws;
  {
    std::ofstream scores(ws / "scores.csv");
    scores << "patient_id,score,label,n_tiles\n";
    for (int i = 0; i < 50; ++i)  // perfectly separated cohort
      scores << "P" << i << ',' << (i % 2 ? 0.8 + i * 1e-3 : 0.2 - i * 1e-3) << ',' << i % 2
             << ",5\n";
  }
  const std::string base = "evaluate --manifest " + (ws / "scores.csv").string() +
                           " --seed 5 --folds 4 --bootstrap 300 --out ";
  REQUIRE(run(base + (ws / "ev1").string()) == 0);
  const std::string report = slurp(ws / "ev1" / "report.json");
  CHECK(report.find("\"auroc\": 1.0") != std::string::npos);
  CHECK(report.find("\"auprc\": 1.0") != std::string::npos);
  CHECK(report.find("\"folds\"") != std::string::npos);
  CHECK(fs::exists(ws / "ev1" / "roc.csv"));
  CHECK(fs::exists(ws / "ev1" / "pr.csv"));

  REQUIRE(run(base + (ws / "ev2").string()) == 0);
  CHECK(slurp(ws / "ev2" / "report.json") == report);

  // unlabeled patients are listed as a validation error
  {
    std::ofstream scores(ws / "unlabeled.csv");
    scores << "patient_id,score,label,n_tiles\nP0,0.5,,3\n";
  }
  CHECK(run("evaluate --manifest " + (ws / "unlabeled.csv").string() + " --out " +
            (ws / "ev3").string()) == 2);
}

TEST_CASE("gradcheck exit codes") {
  Workspace ws;
  CHECK(run("gradcheck --out " + (ws / "gc").string()) == 0);
  const std::string table = slurp(ws / "gc" / "gradcheck.txt");
  for (const char* row : {"bilstm2d", "block", "head", "loss"})
    CHECK(table.find(row) != std::string::npos);
  CHECK(table.find("FAIL") == std::string::npos);

  CHECK(run("gradcheck --corrupt --out " + (ws / "gc2").string()) == 4);
  CHECK(slurp(ws / "gc2" / "gradcheck.txt").find("FAIL") != std::string::npos);
}

TEST_CASE("argument errors are validation failures") {
  CHECK(run("bogus-subcommand") == 2);
  CHECK(run("predict") == 2);  // missing --out
  Workspace ws;
  CHECK(run("predict --out " + (ws / "x").string()) == 2);  // missing checkpoint
}
