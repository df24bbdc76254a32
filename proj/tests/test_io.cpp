#include <doctest.h>

#include "iwd/io.hpp"
#include "iwd/random.hpp"
#include "iwd/svg.hpp"

#include <cstdlib>
#include <sstream>

using namespace iwd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "iwd_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("numbers round-trip through their text form") {
  Rng rng = make_rng(4);
  std::normal_distribution<double> nd(0.0, 1e3);
  for (int k = 0; k < 1000; ++k) {
    const double x = nd(rng) * std::pow(10.0, k % 40 - 20);
    CHECK(std::stod(io::number(x)) == x);
  }
  CHECK(io::number(0.5) == "0.5");
  CHECK(io::number(-3.0) == "-3");
}

TEST_CASE("checkpoints") {
  const ModelState m = init_model(ArchDescriptor::mlp(3, {5, 4}, 2), {}, 17);
  const fs::path p = scratch("model.ckpt");
  io::save_checkpoint(m, p);
  const ModelState back = io::load_checkpoint(p);
  CHECK(back.arch == m.arch);
  CHECK(back.seed == 17);
  CHECK(back.theta == m.theta);

  SUBCASE("the parameter block is little-endian float64") {
    const std::string raw = io::read_text(p);
    const std::size_t body = raw.find('\n') + 1;
    CHECK(raw.size() - body == 8 * static_cast<std::size_t>(m.theta.size()));
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[body + b]);
    CHECK(std::bit_cast<double>(bits) == m.theta[0]);
  }
  SUBCASE("truncation is a format error") {
    std::string raw = io::read_text(p);
    raw.pop_back();
    io::write_text(p, raw);
    CHECK_THROWS_AS(io::load_checkpoint(p), FormatError);
  }
  SUBCASE("a bad header is a format error") {
    io::write_text(p, "{not json\n");
    CHECK_THROWS_AS(io::load_checkpoint(p), FormatError);
  }
}

TEST_CASE("synthetic sets store float32 features") {
  const WeightedDataset ds = gen_gaussian_mixture(3, 8, 4, 0.5, 2);
  const SyntheticSet S = init_synthetic(ds, 2, SyntheticInit::random_real, 5, 0.0123);
  const fs::path stem = scratch("synthetic");
  io::save_synthetic(S, stem);
  CHECK(fs::file_size(fs::path(stem).concat(".bin")) == 4u * 6u * 4u);
  const SyntheticSet back = io::load_synthetic(stem);
  CHECK(back.X == S.X.cast<float>().cast<double>());
  CHECK(back.y == S.y);
  CHECK(back.lr == S.lr);
  CHECK(back.ipc == 2);
  CHECK(back.class_count == 3);

  io::write_text(fs::path(stem).concat(".bin"), "abc");
  CHECK_THROWS_AS(io::load_synthetic(stem), FormatError);
}

TEST_CASE("dataset CSV round-trips exactly") {
  WeightedDataset ds = gen_two_moons(30, 0.2, 3);
  ds.w[4] = 0.0;
  const fs::path p = scratch("data.csv");
  io::save_dataset_csv(ds, p);
  const WeightedDataset back = io::load_dataset_csv(p);
  CHECK(back.X == ds.X);
  CHECK(back.y == ds.y);
  CHECK(back.w == ds.w);
  CHECK(back.class_count == 2);
  CHECK(io::read_text(p).rfind("x0,x1,label,weight\n", 0) == 0);

  io::write_text(p, "x0,label,weight\n1.0,0\n");
  CHECK_THROWS_AS(io::load_dataset_csv(p), FormatError);
  io::write_text(p, "x0,label,weight\n1.0q,0,1\n");
  CHECK_THROWS_AS(io::load_dataset_csv(p), FormatError);
}

TEST_CASE("tables") {
  std::vector<InfluenceRecord> recs(4);
  for (Index i = 0; i < 4; ++i) {
    recs[static_cast<std::size_t>(i)].index = i;
    recs[static_cast<std::size_t>(i)].total = 0.25 * static_cast<double>(i);
  }
  const std::vector<Index> flipped{1, 3};
  const fs::path p = scratch("influence.csv");
  io::save_influence_csv(recs, flipped, p);
  const std::string text = io::read_text(p);
  CHECK(count_lines(text) == 5);
  CHECK(text.find("1,0.25,0,0,1,0,0\n") != std::string::npos);
  CHECK(text.find("2,0.5,0,0,0,0,0\n") != std::string::npos);

  const std::vector<AblationRow> rows{{AblationMode::iwd, 10, 0.5, 0, 0.9, 0.01},
                                      {AblationMode::random_select, 10, 0.5, 1, 0.7, 0.02}};
  io::save_ablation_csv(rows, p);
  CHECK(io::read_text(p) == "mode,ipc,tau,seed,accuracy\niwd,10,0.5,0,0.9\nrandom-select,10,0.5,1,0.7\n");

  const std::vector<Index> idx{0, 1};
  const std::vector<double> a{1.0, 2.0};
  CHECK_THROWS_AS(io::save_scatter_csv(idx, a, std::vector<double>{1.0}, p), ContractError);
}

TEST_CASE("run reports serialise without timing") {
  RunReport r;
  r.losses = {2.0, 1.0};
  r.lrs = {0.1, 0.1};
  r.synthetic = SyntheticSet{Matrix::Zero(2, 2), {0, 1}, 0.1, 1, 2};
  r.wall_seconds = 12.5;
  const io::Json j = io::report_to_json(r);
  CHECK(j.at("losses").size() == 2);
  CHECK(!j.contains("wall_seconds"));
  CHECK(j.dump().find("12.5") == std::string::npos);
}

TEST_CASE("histograms") {
  Rng rng = make_rng(8);
  std::normal_distribution<double> nd;
  std::vector<double> v(500);
  for (double& x : v) x = nd(rng);
  const svg::Histogram h = svg::histogram(v, 20);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == 500);
  CHECK(h.counts.back() >= 1);
  CHECK(svg::render_histogram(h, "scores", "score") == svg::render_histogram(h, "scores", "score"));
  CHECK(svg::histogram(std::vector<double>{2.0, 2.0}, 3).counts[1] == 2);
  CHECK_THROWS_AS(svg::histogram(std::vector<double>{}, 3), ContractError);
  CHECK_THROWS_AS(svg::histogram(v, 0), ContractError);

  const std::string doc = svg::render_histogram(h, "a < b", "x");
  CHECK(doc.find("a &lt; b") != std::string::npos);
  std::size_t bars = 0;
  for (std::size_t at = doc.find("data-count"); at != std::string::npos;
       at = doc.find("data-count", at + 1)) {
    ++bars;
  }
  CHECK(bars == 20);
}

TEST_CASE("line charts") {
  const std::vector<svg::Series> s{{"acc", {0.01, 0.1, 1.0}, {0.5, 0.7, 0.6}}};
  const std::string doc = svg::render_lines(s, "sweep", "tau", "accuracy", true);
  CHECK(doc.find("<polyline") != std::string::npos);
  CHECK(doc.rfind("</svg>\n") == doc.size() - 7);
  const std::vector<svg::Series> bad{{"acc", {0.0, 1.0}, {0.5, 0.7}}};
  CHECK_THROWS_AS(svg::render_lines(bad, "", "", "", true), ContractError);
  const std::vector<svg::Series> ragged{{"acc", {1.0}, {0.5, 0.7}}};
  CHECK_THROWS_AS(svg::render_lines(ragged, "", "", ""), ContractError);
}
