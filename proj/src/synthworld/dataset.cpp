#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <random>

#include "baa/common/error.hpp"
#include "baa/common/rng.hpp"
#include "baa/synthworld/synthworld.hpp"
#include "baa/tensor/io.hpp"

namespace baa::synthworld {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("dataset: " + m); };
  if (image_size < 8 || image_size % 4 != 0) fail("image_size must be a multiple of 4 and >= 8");
  if (!(focal > 0)) fail("focal must be positive");
  if (sequence_length < 2) fail("sequence_length must be >= 2");
  if (test_length < 2) fail("test_length must be >= 2");
  if (source_scenes.count == 0 || target_scenes.count == 0 || test_scenes.count == 0) fail("scene counts must be > 0");
  if (source_scenes.overlaps(test_scenes) || target_scenes.overlaps(test_scenes)) {
    fail("train and test scene seed ranges overlap");
  }
  if (source_scenes.overlaps(target_scenes)) fail("source and target training scene seed ranges overlap");
  if (scene.n_primitives < 1) fail("n_primitives must be >= 1");
  if (!(trajectory.step > 0)) fail("trajectory step must be positive");
}

namespace {

std::uint64_t scene_seed(const DatasetConfig& c, std::uint64_t index) { return derive_seed(c.seed, index); }

std::vector<Scene> make_scenes(const DatasetConfig& c, const SeedRange& range) {
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < range.count; ++i) scenes.push_back(generate_scene(scene_seed(c, range.first + i), c.scene));
  return scenes;
}

std::vector<std::uint64_t> range_values(const SeedRange& r) {
  std::vector<std::uint64_t> v;
  for (std::size_t i = 0; i < r.count; ++i) v.push_back(r.first + i);
  return v;
}

}  // namespace

Datasets build_datasets(const DatasetConfig& config) {
  config.validate();
  Datasets out;
  out.config = config;
  out.intrinsics = desk_intrinsics(config.image_size, config.focal);
  const auto& k = out.intrinsics;
  const auto source_style = DomainStyle::source(), target_style = DomainStyle::target();

  {
    auto& ds = out.source_train;
    ds.name = "source_train";
    ds.scene_seeds = range_values(config.source_scenes);
    const auto scenes = make_scenes(config, config.source_scenes);
    for (std::size_t i = 0; i < config.n_source_sequences; ++i) {
      const Scene& scene = scenes[i % scenes.size()];
      const auto poses = sample_trajectory(scene, config.sequence_length, derive_seed(config.seed, 10'000'000 + i),
                                           config.trajectory);
      std::vector<FrameSample> seq;
      for (const auto& p : poses) seq.push_back(render(scene, source_style, p, k));
      ds.sequences.push_back(std::move(seq));
    }
  }
  {
    auto& ds = out.target_train;
    ds.name = "target_train";
    ds.style = StyleId::target;
    ds.scene_seeds = range_values(config.target_scenes);
    const auto scenes = make_scenes(config, config.target_scenes);
    const std::size_t per_scene = (config.n_target_images + scenes.size() - 1) / scenes.size();
    for (std::size_t s = 0; s < scenes.size() && ds.images.size() < config.n_target_images; ++s) {
      const auto poses = sample_trajectory(scenes[s], std::max<std::size_t>(2, per_scene),
                                           derive_seed(config.seed, 20'000'000 + s), config.trajectory);
      for (std::size_t f = 0; f < per_scene && ds.images.size() < config.n_target_images; ++f) {
        ds.images.push_back(render(scenes[s], target_style, poses[f], k));
      }
    }
    std::mt19937_64 rng(derive_seed(config.seed, 30'000'000));
    std::shuffle(ds.images.begin(), ds.images.end(), rng);
  }
  {
    auto& src = out.source_test;
    auto& tgt = out.target_test;
    src.name = "source_test";
    tgt.name = "target_test";
    tgt.style = StyleId::target;
    src.scene_seeds = tgt.scene_seeds = range_values(config.test_scenes);
    const auto scenes = make_scenes(config, config.test_scenes);
    for (std::size_t i = 0; i < config.n_test_trajectories; ++i) {
      const Scene& scene = scenes[i % scenes.size()];
      const auto poses =
          sample_trajectory(scene, config.test_length, derive_seed(config.seed, 40'000'000 + i), config.trajectory);
      std::vector<FrameSample> s_seq, t_seq;
      for (const auto& p : poses) {
        s_seq.push_back(render(scene, source_style, p, k));
        t_seq.push_back(render(scene, target_style, p, k));
      }
      const Trajectory gt{poses};
      src.ground_truth.push_back(gt);
      tgt.ground_truth.push_back(gt);
      src.anchor_depth.push_back(*s_seq.front().depth);
      tgt.anchor_depth.push_back(*s_seq.front().depth);
      src.sequences.push_back(std::move(s_seq));
      tgt.sequences.push_back(std::move(t_seq));
    }
  }
  return out;
}

namespace {

json range_json(const SeedRange& r) { return {{"first", r.first}, {"count", r.count}}; }
SeedRange range_from(const json& j) { return {j.at("first").get<std::uint64_t>(), j.at("count").get<std::size_t>()}; }

json config_json(const DatasetConfig& c) {
  return {{"seed", c.seed},
          {"image_size", c.image_size},
          {"focal", c.focal},
          {"sequence_length", c.sequence_length},
          {"n_source_sequences", c.n_source_sequences},
          {"n_target_images", c.n_target_images},
          {"n_test_trajectories", c.n_test_trajectories},
          {"test_length", c.test_length},
          {"source_scenes", range_json(c.source_scenes)},
          {"target_scenes", range_json(c.target_scenes)},
          {"test_scenes", range_json(c.test_scenes)},
          {"n_primitives", c.scene.n_primitives},
          {"step", c.trajectory.step},
          {"max_yaw_step", c.trajectory.max_yaw_step},
          {"pitch", c.trajectory.pitch}};
}

DatasetConfig config_from(const json& j) {
  DatasetConfig c;
  c.seed = j.at("seed");
  c.image_size = j.at("image_size");
  c.focal = j.at("focal");
  c.sequence_length = j.at("sequence_length");
  c.n_source_sequences = j.at("n_source_sequences");
  c.n_target_images = j.at("n_target_images");
  c.n_test_trajectories = j.at("n_test_trajectories");
  c.test_length = j.at("test_length");
  c.source_scenes = range_from(j.at("source_scenes"));
  c.target_scenes = range_from(j.at("target_scenes"));
  c.test_scenes = range_from(j.at("test_scenes"));
  c.scene.n_primitives = j.at("n_primitives");
  c.trajectory.step = j.at("step");
  c.trajectory.max_yaw_step = j.at("max_yaw_step");
  c.trajectory.pitch = j.at("pitch");
  return c;
}

std::string seq_dir(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", i);
  return buf;
}

std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%02zu.%s", i, ext);
  return buf;
}

constexpr std::size_t kImagesPerDir = 50;

void write_image(const fs::path& p, const FrameSample& f) {
  tensor::write_tensor(p, tensor::Tensor<float>({f.height, f.width, 3}, f.image), "HWC");
}

void write_depth(const fs::path& p, const DepthMap& d) {
  tensor::write_tensor(p, tensor::Tensor<float>({d.height, d.width, 1}, d.values), "HWC");
}

FrameSample read_image(const fs::path& p) {
  auto st = tensor::read_tensor(p);
  const auto& s = st.tensor.shape();
  if (s.size() != 3 || s[2] != 3) throw IoError(p.string() + ": expected an HxWx3 image");
  FrameSample f;
  f.height = s[0];
  f.width = s[1];
  f.image = st.tensor.storage();
  return f;
}

DepthMap read_depth(const fs::path& p) {
  auto st = tensor::read_tensor(p);
  const auto& s = st.tensor.shape();
  if (s.size() != 3 || s[2] != 1) throw IoError(p.string() + ": expected an HxWx1 depth map");
  return {s[1], s[0], st.tensor.storage()};
}

void write_sequences(const fs::path& dir, const SequenceDataset& ds, bool with_geometry) {
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const fs::path sd = dir / seq_dir(i);
    fs::create_directories(sd);
    Trajectory t;
    for (std::size_t f = 0; f < ds.sequences[i].size(); ++f) {
      const auto& frame = ds.sequences[i][f];
      write_image(sd / frame_name(f, "img"), frame);
      if (with_geometry) {
        write_depth(sd / frame_name(f, "dep"), *frame.depth);
        t.poses.push_back(*frame.pose);
      }
    }
    if (with_geometry) geometry::write_poses(sd / "poses.txt", t);
  }
}

std::vector<std::vector<FrameSample>> read_sequences(const fs::path& dir, std::size_t count, std::size_t length,
                                                     bool with_geometry) {
  std::vector<std::vector<FrameSample>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const fs::path sd = dir / seq_dir(i);
    Trajectory t;
    if (with_geometry) t = geometry::read_poses(sd / "poses.txt");
    if (with_geometry && t.size() != length) throw IoError((sd / "poses.txt").string() + ": wrong pose count");
    std::vector<FrameSample> seq;
    for (std::size_t f = 0; f < length; ++f) {
      auto frame = read_image(sd / frame_name(f, "img"));
      if (with_geometry) {
        frame.depth = read_depth(sd / frame_name(f, "dep"));
        frame.pose = t.poses[f];
      }
      seq.push_back(std::move(frame));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

void write_datasets(const fs::path& dir, const Datasets& data) {
  try {
    fs::create_directories(dir);
    write_sequences(dir / "source_train", data.source_train, true);
    write_sequences(dir / "source_test", data.source_test, true);
    write_sequences(dir / "target_test", data.target_test, false);
    const auto& imgs = data.target_train.images;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const fs::path sd = dir / "target_train" / seq_dir(i / kImagesPerDir);
      if (i % kImagesPerDir == 0) fs::create_directories(sd);
      write_image(sd / frame_name(i % kImagesPerDir, "img"), imgs[i]);
    }
    for (std::size_t i = 0; i < data.target_test.ground_truth.size(); ++i) {
      const fs::path sd = dir / "target_test_gt" / seq_dir(i);
      fs::create_directories(sd);
      geometry::write_poses(sd / "poses.txt", data.target_test.ground_truth[i]);
      write_depth(sd / frame_name(0, "dep"), data.target_test.anchor_depth[i]);
    }
    auto split = [](const SequenceDataset& ds) {
      return json{{"sequences", ds.sequences.size()},
                  {"frames_per_sequence", ds.sequences.empty() ? 0 : ds.sequences.front().size()},
                  {"images", ds.images.size()},
                  {"style", ds.style == StyleId::source ? "source" : "target"},
                  {"scene_seeds", ds.scene_seeds}};
    };
    const json manifest{{"format_version", 1},
                        {"config", config_json(data.config)},
                        {"intrinsics",
                         {{"fx", data.intrinsics.fx},
                          {"fy", data.intrinsics.fy},
                          {"cx", data.intrinsics.cx},
                          {"cy", data.intrinsics.cy},
                          {"width", data.intrinsics.width},
                          {"height", data.intrinsics.height}}},
                        {"splits",
                         {{"source_train", split(data.source_train)},
                          {"source_test", split(data.source_test)},
                          {"target_train", split(data.target_train)},
                          {"target_test", split(data.target_test)}}}};
    tensor::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }
}

Datasets read_datasets(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(tensor::read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  Datasets d;
  try {
    d.config = config_from(manifest.at("config"));
    const auto& k = manifest.at("intrinsics");
    d.intrinsics = {k.at("fx"), k.at("fy"), k.at("cx"), k.at("cy"), k.at("width"), k.at("height")};
    const auto& splits = manifest.at("splits");
    auto load_seq = [&](SequenceDataset& ds, const char* name, StyleId style, bool geom) {
      const auto& s = splits.at(name);
      ds.name = name;
      ds.style = style;
      ds.scene_seeds = s.at("scene_seeds").get<std::vector<std::uint64_t>>();
      ds.sequences = read_sequences(dir / name, s.at("sequences"), s.at("frames_per_sequence"), geom);
    };
    load_seq(d.source_train, "source_train", StyleId::source, true);
    load_seq(d.source_test, "source_test", StyleId::source, true);
    load_seq(d.target_test, "target_test", StyleId::target, false);
    for (const auto& seq : d.source_test.sequences) {
      Trajectory t;
      for (const auto& f : seq) t.poses.push_back(*f.pose);
      d.source_test.ground_truth.push_back(t);
      d.source_test.anchor_depth.push_back(*seq.front().depth);
    }
    for (std::size_t i = 0; i < d.target_test.sequences.size(); ++i) {
      const fs::path sd = dir / "target_test_gt" / seq_dir(i);
      d.target_test.ground_truth.push_back(geometry::read_poses(sd / "poses.txt"));
      d.target_test.anchor_depth.push_back(read_depth(sd / frame_name(0, "dep")));
    }
    const auto& tt = splits.at("target_train");
    d.target_train.name = "target_train";
    d.target_train.style = StyleId::target;
    d.target_train.scene_seeds = tt.at("scene_seeds").get<std::vector<std::uint64_t>>();
    const std::size_t n = tt.at("images");
    for (std::size_t i = 0; i < n; ++i) {
      d.target_train.images.push_back(
          read_image(dir / "target_train" / seq_dir(i / kImagesPerDir) / frame_name(i % kImagesPerDir, "img")));
    }
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  return d;
}

}  // namespace baa::synthworld
