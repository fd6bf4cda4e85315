#include <filesystem>
#include <map>
#include <numbers>
#include <sstream>

#include "baa/cli/app.hpp"
#include "baa/cli/config.hpp"
#include "baa/cli/manifest.hpp"
#include "baa/cli/plot.hpp"
#include "baa/common/error.hpp"
#include "baa/tensor/io.hpp"
#include "doctest.h"

using namespace baa;
using namespace baa::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("baa_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result baa_run(std::vector<std::string> args) {
  args.insert(args.begin(), "baa");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = tensor::read_file(e.path());
  return files;
}

const std::string kSmoke = R"([dataset]
n_source_sequences = 6
n_target_images = 16
n_test_trajectories = 2
test_length = 9
source_scene_count = 2
target_scene_count = 2
test_scene_count = 2
[pretrain]
epochs = 1
batch = 3
[adapt]
epochs = 1
batch = 8
ce_sequences = 2
)";

}  // namespace

TEST_CASE("config defaults round-trip through the canonical INI") {
  const auto c = parse_config("");
  const auto text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
  CHECK(c.train.adapt.disc_lr == doctest::Approx(3e-4));
  CHECK(c.dataset.image_size == 32);
  CHECK(c.train.disc.in_channels == c.train.net.embed_dim);
}

TEST_CASE("config overrides, degrees and derived discriminator grid") {
  const auto c = parse_config("[dataset]\nimage_size = 64\nmax_yaw_step = 90\n[adapt]\ngen_lr = 2e-4\ndisc_lr = 6e-4\n");
  CHECK(c.dataset.image_size == 64);
  CHECK(c.dataset.trajectory.max_yaw_step == doctest::Approx(std::numbers::pi / 2));
  CHECK(c.train.disc.grid == 16);
  CHECK_NOTHROW(c.train.validate());
}

TEST_CASE("config rejects unknown keys, bad values and stray keys") {
  CHECK_THROWS_AS(parse_config("[adapt]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[pretrain]\nepochs = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[pretrain]\nlr = 1e-3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 3\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/baa.ini"), ConfigError);
}

TEST_CASE("sha256 matches published test vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("content hash depends on bytes and names, not on location") {
  const auto a = scratch("hash_a") / "in", b = scratch("hash_b") / "in";
  fs::create_directories(a);
  fs::create_directories(b);
  tensor::write_file(a / "x.txt", "one");
  tensor::write_file(a / "y.txt", "two");
  tensor::write_file(b / "y.txt", "two");
  tensor::write_file(b / "x.txt", "one");
  CHECK(content_hash({a}) == content_hash({b}));
  tensor::write_file(b / "x.txt", "One");
  CHECK(content_hash({a}) != content_hash({b}));
  CHECK(content_hash({a}).size() == 64);
}

TEST_CASE("plots carry every series") {
  const std::vector<Series> s{{"first", {1, 2, 3}, {1, 4, 9}}, {"second", {1, 2, 3}, {2, 2, 2}}};
  const auto svg = line_plot_svg(s, {"t", "x", "y", false});
  CHECK(svg.starts_with("<svg"));
  CHECK(svg.find("first") != std::string::npos);
  CHECK(svg.find("second") != std::string::npos);
  CHECK(series_csv(s) == "series,x,y\nfirst,1,1\nfirst,2,4\nfirst,3,9\nsecond,1,2\nsecond,2,2\nsecond,3,2\n");
  CHECK(line_plot_svg({}, {"empty", "x", "y", true}).starts_with("<svg"));
}

TEST_CASE("exit codes for bad config, missing data and missing checkpoint") {
  const auto dir = scratch("codes");
  tensor::write_file(dir / "bad.ini", "[adapt]\ndisc_lr = 1e-3\n");
  CHECK(baa_run({"config", "--config", (dir / "bad.ini").string()}).code == kConfigError);
  CHECK(baa_run({"pretrain", "--data", (dir / "none").string(), "--out", (dir / "p").string()}).code == kIoError);
  CHECK(baa_run({"eval", "--data", (dir / "none").string(), "--checkpoint", (dir / "c").string(), "--out",
                 (dir / "e").string()})
            .code != kOk);
  const auto r = baa_run({"config", "--config", (dir / "bad.ini").string()});
  CHECK(r.err.find("baa config") != std::string::npos);
}

TEST_CASE("smoke pipeline writes every artefact and reruns byte-identically") {
  const auto dir = scratch("pipeline");
  tensor::write_file(dir / "smoke.ini", kSmoke);
  const auto cfg = (dir / "smoke.ini").string();
  auto pipeline = [&](const fs::path& root) {
    const auto data = (root / "data").string(), pre = (root / "pre").string(), post = (root / "post").string();
    REQUIRE(baa_run({"gen-data", "--config", cfg, "--out", data}).code == kOk);
    REQUIRE(baa_run({"pretrain", "--config", cfg, "--data", data, "--out", pre}).code == kOk);
    REQUIRE(baa_run({"adapt", "--config", cfg, "--data", data, "--from", pre, "--mode", "baa", "--out", post}).code ==
            kOk);
    REQUIRE(baa_run({"histogram", "--config", cfg, "--data", data, "--checkpoint", pre, "--phase", "pre", "--out",
                     (root / "hist").string()})
                .code == kOk);
    REQUIRE(baa_run({"histogram", "--config", cfg, "--data", data, "--checkpoint", post, "--phase", "post", "--out",
                     (root / "hist").string()})
                .code == kOk);
    REQUIRE(baa_run({"eval", "--config", cfg, "--data", data, "--checkpoint", pre, "--checkpoint", post, "--label",
                     "pre", "--label", "post", "--out", (root / "eval").string()})
                .code == kOk);
  };
  // Same relative layout under one root so manifests match.
  pipeline(dir / "run");
  const auto first = tree_bytes(dir / "run");
  fs::rename(dir / "run", dir / "first");
  pipeline(dir / "run");
  const auto second = tree_bytes(dir / "run");

  for (const char* f : {"post/metrics.json", "post/training_log.csv", "post/ape_curve.svg", "post/exclusivity.svg",
                        "post/run_manifest.json", "pre/training_loss.svg", "hist/histogram_overlay.svg",
                        "eval/metrics.json", "data/manifest.json"}) {
    CAPTURE(f);
    CHECK(first.count(f) == 1);
  }
  REQUIRE(first.size() == second.size());
  for (const auto& [name, bytes] : first) {
    CAPTURE(name);
    CHECK(second.count(name) == 1);
    CHECK((second.count(name) && second.at(name) == bytes));
  }
}
