#pragma once

// Procedural indoor scenes rendered in two appearance styles over shared
// geometry. Units are millimetres, world z is up.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "baa/geometry/geometry.hpp"

namespace baa::synthworld {

using geometry::DepthMap;
using geometry::Intrinsics;
using geometry::Pose;
using geometry::Trajectory;
using geometry::Vec3;

struct Box {
  Vec3 lo, hi;
};

// Per-primitive geometric attributes consumed by the appearance function.
struct Primitive {
  Box box;
  double identity = 0;  // in [0, 1), drawn from the scene seed
};

struct Rect2 {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct Scene {
  std::uint64_t seed = 0;
  Box room;
  // Identity scalars of the six shell faces: -x, +x, -y, +y, floor, ceiling.
  double shell_identity[6] = {};
  std::vector<Primitive> clutter;
  // Navigable region: the room outline inset by the camera clearance, minus
  // the clutter footprints inflated by the same clearance.
  Rect2 outline;
  std::vector<Rect2> obstacles;
  double camera_height = 1200;

  bool is_navigable(double x, double y) const;
  // Navigable and at a height strictly inside the room.
  bool is_valid_camera(const Vec3& p) const;
};

struct SceneParams {
  std::size_t n_primitives = 8;
  double min_room = 4000, max_room = 7000;
  double room_height = 2600;
  double clearance = 350;
  double camera_height = 1200;
  int max_retries = 50;
};

Scene generate_scene(std::uint64_t seed, const SceneParams& params = {});

// Hand-built scene for tests: a room with the given clutter.
Scene make_scene(const Box& room, std::vector<Box> clutter, double clearance, double camera_height,
                 std::uint64_t seed = 0);

struct RayHit {
  double t = 0;  // ray parameter; equals camera z-depth for rays with unit camera z
  Vec3 point;
  Vec3 normal;
  int primitive = -1;  // 0..5 shell faces, 6 + i clutter box i
};

RayHit cast_ray(const Scene& scene, const Vec3& origin, const Vec3& direction);

enum class StyleId { source, target };

struct DomainStyle {
  StyleId id = StyleId::source;
  double hue_offset = 0, hue_scale = 1;
  double saturation = 0.55, value = 0.85;
  Vec3 light_dir = Vec3(0.3, -0.5, 0.81);
  double ambient = 0.45;
  double texture_contrast = 0.6;
  double height_gradient = 0.15;
  double gamma = 1.0;
  double noise_amplitude = 0.0;

  static DomainStyle source();
  static DomainStyle target();
};

struct FrameSample {
  std::size_t width = 0, height = 0;
  std::vector<float> image;  // HWC, values in [0, 1]
  std::optional<DepthMap> depth;
  std::optional<Pose> pose;
};

enum class RenderMode {
  normal,  // target style strips depth and pose
  probe,   // always attach depth and pose (tests and ground-truth export)
};

FrameSample render(const Scene& scene, const DomainStyle& style, const Pose& pose, const Intrinsics& k,
                   RenderMode mode = RenderMode::normal);

// Default desk-scale camera: 32x32, f = 28 px, centred principal point.
Intrinsics desk_intrinsics(std::size_t size = 32, double focal = 28.0);

struct TrajectoryParams {
  double step = 200;                 // arc length between frames
  double max_yaw_step = 0.3490658503988659;  // 20 degrees
  double pitch = 0.0;
  double min_goal_distance = 1500;
  double grid_cell = 100;
};

// Shortest navigable path from start to goal, resampled at `step` with
// heading-aligned, rate-limited yaw. Ends at the goal.
std::vector<Pose> trajectory_between(const Scene& scene, const Vec3& start, const Vec3& goal,
                                     const TrajectoryParams& params = {});

// Chains shortest paths between random navigable goals until `length`
// poses are produced.
std::vector<Pose> sample_trajectory(const Scene& scene, std::size_t length, std::uint64_t seed,
                                    const TrajectoryParams& params = {});

struct SeedRange {
  std::uint64_t first = 0;
  std::size_t count = 0;
  bool overlaps(const SeedRange& o) const { return first < o.first + o.count && o.first < first + count; }
};

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t image_size = 32;
  double focal = 28.0;
  std::size_t sequence_length = 5;
  std::size_t n_source_sequences = 2000;
  std::size_t n_target_images = 4000;
  std::size_t n_test_trajectories = 20;
  std::size_t test_length = 51;  // frame 0 anchor + 50 evaluated frames
  SeedRange source_scenes{1000, 40};
  SeedRange target_scenes{2000, 40};
  SeedRange test_scenes{3000, 20};
  SceneParams scene;
  TrajectoryParams trajectory;

  // Throws ConfigError.
  void validate() const;
};

struct SequenceDataset {
  std::string name;
  StyleId style = StyleId::source;
  std::vector<std::vector<FrameSample>> sequences;  // ordered frames
  std::vector<FrameSample> images;                  // unordered target images
  // Held out of the frames themselves; evaluation only.
  std::vector<Trajectory> ground_truth;
  std::vector<DepthMap> anchor_depth;  // frame-0 depth of each sequence
  std::vector<std::uint64_t> scene_seeds;
};

struct Datasets {
  DatasetConfig config;
  Intrinsics intrinsics;
  SequenceDataset source_train, source_test, target_train, target_test;
};

Datasets build_datasets(const DatasetConfig& config);

// On-disk layout under `dir`:
//   manifest.json
//   <split>/seq_XXXX/frame_YY.img   HWC float image
//   <split>/seq_XXXX/frame_YY.dep   HW depth (source splits)
//   <split>/seq_XXXX/poses.txt      (source splits)
//   target_test_gt/seq_XXXX/{poses.txt,frame_00.dep}
void write_datasets(const std::filesystem::path& dir, const Datasets& data);
Datasets read_datasets(const std::filesystem::path& dir);

}  // namespace baa::synthworld
