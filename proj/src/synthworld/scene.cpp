#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "baa/common/error.hpp"
#include "baa/common/rng.hpp"
#include "baa/synthworld/synthworld.hpp"
#include "grid.hpp"

namespace baa::synthworld {

bool Scene::is_navigable(double x, double y) const {
  if (!outline.contains(x, y)) return false;
  for (const auto& o : obstacles)
    if (o.contains(x, y)) return false;
  return true;
}

bool Scene::is_valid_camera(const Vec3& p) const {
  return p.allFinite() && is_navigable(p.x(), p.y()) && p.z() > room.lo.z() && p.z() < room.hi.z();
}

namespace {

Rect2 inflate(const Box& b, double by) {
  return {b.lo.x() - by, b.lo.y() - by, b.hi.x() + by, b.hi.y() + by};
}

void fill_navigable(Scene& s, double clearance) {
  s.outline = {s.room.lo.x() + clearance, s.room.lo.y() + clearance, s.room.hi.x() - clearance,
               s.room.hi.y() - clearance};
  s.obstacles.clear();
  for (const auto& p : s.clutter) s.obstacles.push_back(inflate(p.box, clearance));
}

}  // namespace

Scene make_scene(const Box& room, std::vector<Box> clutter, double clearance, double camera_height,
                 std::uint64_t seed) {
  Scene s;
  s.seed = seed;
  s.room = room;
  for (int f = 0; f < 6; ++f) s.shell_identity[f] = hash_unit(derive_seed(seed, 100 + f));
  for (std::size_t i = 0; i < clutter.size(); ++i) {
    s.clutter.push_back({clutter[i], hash_unit(derive_seed(seed, 200 + i))});
  }
  s.camera_height = camera_height;
  fill_navigable(s, clearance);
  return s;
}

Scene generate_scene(std::uint64_t seed, const SceneParams& params) {
  if (params.n_primitives < 1) throw InvalidInput("generate_scene: n_primitives must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> room_side(params.min_room, params.max_room);
  const double w = room_side(rng), d = room_side(rng);
  const Box room{Vec3(0, 0, 0), Vec3(w, d, params.room_height)};
  std::uniform_real_distribution<double> side(300, 1200), height(300, 2000), unit(0, 1);

  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < params.n_primitives; ++i) {
      const double sx = side(rng), sy = side(rng), sz = height(rng);
      const double x = unit(rng) * (w - sx), y = unit(rng) * (d - sy);
      boxes.push_back({Vec3(x, y, 0), Vec3(x + sx, y + sy, sz)});
    }
    Scene s = make_scene(room, std::move(boxes), params.clearance, params.camera_height, seed);
    detail::NavGrid grid(s, 100);
    int largest = -1;
    std::size_t size = 0;
    grid.components(largest, size);
    const double outline_cells = (s.outline.x1 - s.outline.x0) * (s.outline.y1 - s.outline.y0) / (100.0 * 100.0);
    if (largest >= 0 && static_cast<double>(size) >= 0.35 * outline_cells) return s;
  }
  throw GenerationError("generate_scene: no placement with a connected navigable region after " +
                        std::to_string(params.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
}

RayHit cast_ray(const Scene& scene, const Vec3& o, const Vec3& dir) {
  RayHit hit;
  hit.t = std::numeric_limits<double>::infinity();
  // Exit through the room shell.
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0) continue;
    const bool positive = dir[a] > 0;
    const double t = ((positive ? scene.room.hi[a] : scene.room.lo[a]) - o[a]) / dir[a];
    if (t < hit.t) {
      hit.t = t;
      hit.primitive = 2 * a + (positive ? 1 : 0);
      hit.normal = Vec3::Zero();
      hit.normal[a] = positive ? -1 : 1;
    }
  }
  // Nearest clutter box entry.
  for (std::size_t b = 0; b < scene.clutter.size(); ++b) {
    const Box& box = scene.clutter[b].box;
    double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0) {
        if (o[a] < box.lo[a] || o[a] > box.hi[a]) miss = true;
        continue;
      }
      double t0 = (box.lo[a] - o[a]) / dir[a], t1 = (box.hi[a] - o[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_near) {
        t_near = t0;
        axis = a;
      }
      t_far = std::min(t_far, t1);
    }
    if (miss || axis < 0 || t_near > t_far || t_near <= 0 || t_near >= hit.t) continue;
    hit.t = t_near;
    hit.primitive = 6 + static_cast<int>(b);
    hit.normal = Vec3::Zero();
    hit.normal[axis] = dir[axis] > 0 ? -1 : 1;
  }
  hit.point = o + hit.t * dir;
  return hit;
}

DomainStyle DomainStyle::source() { return {}; }

DomainStyle DomainStyle::target() {
  DomainStyle s;
  s.id = StyleId::target;
  s.hue_offset = 0.45;
  s.hue_scale = -1.0;
  s.saturation = 0.35;
  s.value = 0.95;
  s.light_dir = Vec3(-0.6, 0.4, 0.69);
  s.ambient = 0.3;
  s.texture_contrast = 0.5;
  s.height_gradient = -0.25;
  s.gamma = 1.8;
  s.noise_amplitude = 0.04;
  return s;
}

Intrinsics desk_intrinsics(std::size_t size, double focal) {
  const double c = (static_cast<double>(size) - 1) / 2;
  return {focal, focal, c, c, size, size};
}

namespace {

double smooth(double t) { return t * t * (3 - 2 * t); }

double lattice(std::uint64_t seed, long long i, long long j) {
  return hash_unit(derive_seed(seed, static_cast<std::uint64_t>(i) * 0x9E3779B1ULL ^ static_cast<std::uint64_t>(j)));
}

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto i = static_cast<long long>(fx), j = static_cast<long long>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = lattice(seed, i, j), b = lattice(seed, i + 1, j);
  const double c = lattice(seed, i, j + 1), d = lattice(seed, i + 1, j + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

// Three octaves, base wavelength 600 mm, normalised to [0, 1].
double texture(std::uint64_t seed, double u, double v) {
  double acc = 0, amp = 1, norm = 0, scale = 1.0 / 600.0;
  for (int o = 0; o < 3; ++o) {
    acc += amp * value_noise(derive_seed(seed, o), u * scale, v * scale);
    norm += amp;
    amp *= 0.5;
    scale *= 2;
  }
  return acc / norm;
}

Vec3 hsv(double h, double s, double v) {
  h = (h - std::floor(h)) * 6;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Vec3 appearance(const Scene& scene, const DomainStyle& style, const RayHit& hit) {
  const double identity = hit.primitive < 6 ? scene.shell_identity[hit.primitive]
                                            : scene.clutter[static_cast<std::size_t>(hit.primitive - 6)].identity;
  int axis = 0;
  hit.normal.cwiseAbs().maxCoeff(&axis);
  const double u = hit.point[(axis + 1) % 3], v = hit.point[(axis + 2) % 3];
  const std::uint64_t surface = derive_seed(scene.seed, 1000 + static_cast<std::uint64_t>(hit.primitive));
  const double tex = texture(surface, u, v);
  const double tint = texture(derive_seed(surface, 77), u + 1234.5, v - 321.0) - 0.5;

  const double hue = style.hue_offset + style.hue_scale * (identity + 0.12 * tint);
  Vec3 c = hsv(hue, style.saturation, style.value);
  const double lambert = std::max(0.0, hit.normal.dot(style.light_dir.normalized()));
  const double shade = style.ambient + (1 - style.ambient) * lambert;
  const double rel_height = hit.point.z() / std::max(1.0, scene.room.hi.z()) - 0.5;
  c *= ((1 - style.texture_contrast) + style.texture_contrast * tex) * shade * (1 + style.height_gradient * rel_height);
  for (int ch = 0; ch < 3; ++ch) c[ch] = std::pow(std::clamp(c[ch], 0.0, 1.0), 1.0 / style.gamma);
  return c;
}

std::uint64_t pose_hash(const Pose& p) {
  std::uint64_t h = 0x12345;
  auto feed = [&](double x) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    h = mix64(h ^ bits);
  };
  for (int i = 0; i < 9; ++i) feed(p.rotation(i / 3, i % 3));
  for (int i = 0; i < 3; ++i) feed(p.translation(i));
  return h;
}

}  // namespace

FrameSample render(const Scene& scene, const DomainStyle& style, const Pose& pose, const Intrinsics& k,
                   RenderMode mode) {
  k.validate();
  if (!pose.is_valid(1e-6)) throw InvalidInput("render: pose rotation is not in SO(3)");
  if (!scene.is_valid_camera(pose.translation)) throw InvalidInput("render: camera pose outside the navigable region");

  FrameSample f;
  f.width = k.width;
  f.height = k.height;
  f.image.assign(k.width * k.height * 3, 0.f);
  DepthMap depth{k.width, k.height, std::vector<float>(k.width * k.height)};
  const geometry::Mat3& r = pose.rotation;
  const Vec3& o = pose.translation;
  const std::uint64_t noise_seed = derive_seed(scene.seed, pose_hash(pose));
  static constexpr double offsets[4][2] = {{-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}, {0.25, 0.25}};

  for (std::size_t v = 0; v < k.height; ++v)
    for (std::size_t u = 0; u < k.width; ++u) {
      const std::size_t px = v * k.width + u;
      auto ray = [&](double du, double dv) {
        return Vec3(r * Vec3((static_cast<double>(u) + du - k.cx) / k.fx, (static_cast<double>(v) + dv - k.cy) / k.fy, 1));
      };
      depth.values[px] = static_cast<float>(cast_ray(scene, o, ray(0, 0)).t);
      Vec3 colour = Vec3::Zero();
      for (const auto& off : offsets) colour += appearance(scene, style, cast_ray(scene, o, ray(off[0], off[1])));
      colour /= 4;
      for (int ch = 0; ch < 3; ++ch) {
        double c = colour[ch];
        if (style.noise_amplitude > 0) c += style.noise_amplitude * (2 * hash_unit(derive_seed(noise_seed, px * 3 + ch)) - 1);
        f.image[px * 3 + ch] = static_cast<float>(std::clamp(c, 0.0, 1.0));
      }
    }
  if (style.id == StyleId::source || mode == RenderMode::probe) {
    f.depth = std::move(depth);
    f.pose = pose;
  }
  return f;
}

}  // namespace baa::synthworld
