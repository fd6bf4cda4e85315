#include "baa/cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "baa/common/error.hpp"
#include "baa/tensor/io.hpp"

namespace baa::cli {
namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
  return v;
}

// Builds a key bound to a numeric field reached through `field`.
template <typename T, typename Accessor>
ConfigKey numeric(std::string section, std::string name, std::string help, Accessor field) {
  const std::string full = section + "." + name;
  ConfigKey k;
  k.section = std::move(section);
  k.name = std::move(name);
  k.help = std::move(help);
  k.get = [field](const AppConfig& c) {
    const T v = field(const_cast<AppConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) return format_double(v);
    else return std::to_string(v);
  };
  k.set = [field, full](AppConfig& c, const std::string& text) { field(c) = parse_number<T>(full, text); };
  return k;
}

// Angles are stored in radians and exposed in degrees.
ConfigKey degrees(std::string section, std::string name, std::string help, double synthworld::TrajectoryParams::*m) {
  const std::string full = section + "." + name;
  ConfigKey k;
  k.section = std::move(section);
  k.name = std::move(name);
  k.help = std::move(help);
  k.get = [m](const AppConfig& c) { return format_double(c.dataset.trajectory.*m * 180.0 / std::numbers::pi); };
  k.set = [m, full](AppConfig& c, const std::string& text) {
    c.dataset.trajectory.*m = parse_number<double>(full, text) * std::numbers::pi / 180.0;
  };
  return k;
}

std::vector<ConfigKey> build_keys() {
  using D = double;
  using Z = std::size_t;
  using U = std::uint64_t;
  std::vector<ConfigKey> k;
  // dataset
  k.push_back(numeric<U>("dataset", "seed", "dataset master seed", [](AppConfig& c) -> U& { return c.dataset.seed; }));
  k.push_back(numeric<Z>("dataset", "image_size", "square image side in pixels", [](AppConfig& c) -> Z& { return c.dataset.image_size; }));
  k.push_back(numeric<D>("dataset", "focal", "focal length in pixels", [](AppConfig& c) -> D& { return c.dataset.focal; }));
  k.push_back(numeric<Z>("dataset", "sequence_length", "frames per source training sequence", [](AppConfig& c) -> Z& { return c.dataset.sequence_length; }));
  k.push_back(numeric<Z>("dataset", "n_source_sequences", "source training sequences", [](AppConfig& c) -> Z& { return c.dataset.n_source_sequences; }));
  k.push_back(numeric<Z>("dataset", "n_target_images", "unordered target training images", [](AppConfig& c) -> Z& { return c.dataset.n_target_images; }));
  k.push_back(numeric<Z>("dataset", "n_test_trajectories", "held-out test trajectories per domain", [](AppConfig& c) -> Z& { return c.dataset.n_test_trajectories; }));
  k.push_back(numeric<Z>("dataset", "test_length", "poses per test trajectory (anchor + evaluated)", [](AppConfig& c) -> Z& { return c.dataset.test_length; }));
  k.push_back(numeric<U>("dataset", "source_scene_first", "first source training scene id", [](AppConfig& c) -> U& { return c.dataset.source_scenes.first; }));
  k.push_back(numeric<Z>("dataset", "source_scene_count", "source training scenes", [](AppConfig& c) -> Z& { return c.dataset.source_scenes.count; }));
  k.push_back(numeric<U>("dataset", "target_scene_first", "first target training scene id", [](AppConfig& c) -> U& { return c.dataset.target_scenes.first; }));
  k.push_back(numeric<Z>("dataset", "target_scene_count", "target training scenes", [](AppConfig& c) -> Z& { return c.dataset.target_scenes.count; }));
  k.push_back(numeric<U>("dataset", "test_scene_first", "first test scene id", [](AppConfig& c) -> U& { return c.dataset.test_scenes.first; }));
  k.push_back(numeric<Z>("dataset", "test_scene_count", "test scenes", [](AppConfig& c) -> Z& { return c.dataset.test_scenes.count; }));
  k.push_back(numeric<Z>("dataset", "n_primitives", "clutter boxes per scene", [](AppConfig& c) -> Z& { return c.dataset.scene.n_primitives; }));
  k.push_back(numeric<D>("dataset", "min_room", "smallest room side, mm", [](AppConfig& c) -> D& { return c.dataset.scene.min_room; }));
  k.push_back(numeric<D>("dataset", "max_room", "largest room side, mm", [](AppConfig& c) -> D& { return c.dataset.scene.max_room; }));
  k.push_back(numeric<D>("dataset", "room_height", "room height, mm", [](AppConfig& c) -> D& { return c.dataset.scene.room_height; }));
  k.push_back(numeric<D>("dataset", "clearance", "camera clearance from walls and boxes, mm", [](AppConfig& c) -> D& { return c.dataset.scene.clearance; }));
  k.push_back(numeric<D>("dataset", "camera_height", "camera height above the floor, mm", [](AppConfig& c) -> D& { return c.dataset.scene.camera_height; }));
  k.push_back(numeric<D>("dataset", "step", "trajectory arc length per frame, mm", [](AppConfig& c) -> D& { return c.dataset.trajectory.step; }));
  k.push_back(degrees("dataset", "max_yaw_step", "largest yaw change per frame, degrees", &synthworld::TrajectoryParams::max_yaw_step));
  k.push_back(numeric<D>("dataset", "min_goal_distance", "shortest distance to a new trajectory goal, mm", [](AppConfig& c) -> D& { return c.dataset.trajectory.min_goal_distance; }));
  // pretrain
  k.push_back(numeric<U>("pretrain", "seed", "training seed (weights and data order)", [](AppConfig& c) -> U& { return c.train.seed; }));
  k.push_back(numeric<D>("pretrain", "lr", "Adam learning rate", [](AppConfig& c) -> D& { return c.train.pretrain.lr; }));
  k.push_back(numeric<Z>("pretrain", "epochs", "passes over the source sequences", [](AppConfig& c) -> Z& { return c.train.pretrain.epochs; }));
  k.push_back(numeric<Z>("pretrain", "batch", "sequences per step", [](AppConfig& c) -> Z& { return c.train.pretrain.batch; }));
  k.push_back(numeric<D>("pretrain", "temperature", "softmax temperature of inferred correspondences", [](AppConfig& c) -> D& { return c.train.temperature; }));
  k.push_back(numeric<Z>("pretrain", "base_channels", "U-Net channels at full resolution", [](AppConfig& c) -> Z& { return c.train.net.base_channels; }));
  k.push_back(numeric<Z>("pretrain", "levels", "U-Net encoder levels", [](AppConfig& c) -> Z& { return c.train.net.levels; }));
  k.push_back(numeric<Z>("pretrain", "embed_dim", "embedding channels", [](AppConfig& c) -> Z& { return c.train.net.embed_dim; }));
  // adapt
  k.push_back(numeric<Z>("adapt", "batch", "source and target images per step, each", [](AppConfig& c) -> Z& { return c.train.adapt.batch; }));
  k.push_back(numeric<Z>("adapt", "epochs", "passes over the target images", [](AppConfig& c) -> Z& { return c.train.adapt.epochs; }));
  k.push_back(numeric<D>("adapt", "disc_lr", "discriminator learning rate (3x gen_lr)", [](AppConfig& c) -> D& { return c.train.adapt.disc_lr; }));
  k.push_back(numeric<D>("adapt", "gen_lr", "mapping network learning rate", [](AppConfig& c) -> D& { return c.train.adapt.gen_lr; }));
  k.push_back(numeric<D>("adapt", "alpha", "weight of the source-side log term", [](AppConfig& c) -> D& { return c.train.weights.alpha; }));
  k.push_back(numeric<D>("adapt", "beta", "weight of the target-side log term", [](AppConfig& c) -> D& { return c.train.weights.beta; }));
  k.push_back(numeric<D>("adapt", "lambda_ce", "weight of the source correspondence loss", [](AppConfig& c) -> D& { return c.train.lambda_ce; }));
  k.push_back(numeric<Z>("adapt", "ce_sequences", "source sequences per step for the correspondence loss", [](AppConfig& c) -> Z& { return c.train.adapt.ce_sequences; }));
  k.push_back(numeric<D>("adapt", "divergence_limit", "halt when |GEN| exceeds this", [](AppConfig& c) -> D& { return c.train.adapt.divergence_limit; }));
  k.push_back(numeric<Z>("adapt", "disc_width", "discriminator channels after the first conv", [](AppConfig& c) -> Z& { return c.train.disc.width; }));
  // eval
  k.push_back(numeric<D>("eval", "confidence_floor", "minimum match probability used by the pose solver", [](AppConfig& c) -> D& { return c.train.eval.solver.confidence_floor; }));
  k.push_back(numeric<D>("eval", "soft_window", "soft-match radius in mm, 0 for hard argmax", [](AppConfig& c) -> D& { return c.train.eval.solver.soft_window; }));
  {
    ConfigKey fill;
    fill.section = "eval";
    fill.name = "fill_unmatched";
    fill.help = "buffer unmatched cells at the depth of the nearest matched cell (0 or 1)";
    fill.get = [](const AppConfig& c) { return std::string(c.train.eval.fill_unmatched ? "1" : "0"); };
    fill.set = [](AppConfig& c, const std::string& text) {
      if (text != "0" && text != "1") throw ConfigError("config key eval.fill_unmatched: expected 0 or 1, got '" + text + "'");
      c.train.eval.fill_unmatched = text == "1";
    };
    k.push_back(std::move(fill));
  }
  k.push_back(numeric<Z>("eval", "max_length", "APE curve and ATE horizon in frames", [](AppConfig& c) -> Z& { return c.train.eval.max_length; }));
  return k;
}

void sync_derived(AppConfig& c) {
  c.train.disc.in_channels = c.train.net.embed_dim;
  c.train.disc.grid = c.dataset.image_size >> c.train.net.output_level;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const auto keys = build_keys();
  return keys;
}

AppConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, const ConfigKey*> lookup;
  for (const auto& k : config_keys()) lookup[k.section + "." + k.name] = &k;
  AppConfig c;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [name, value] : entries) {
      const auto it = lookup.find(section + "." + name);
      if (it == lookup.end()) throw ConfigError("config: unknown key [" + section + "] " + name);
      it->second->set(c, value.data());
    }
  }
  sync_derived(c);
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(tensor::read_file(path));
}

std::string format_config(const AppConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << "; " << k.help << '\n' << k.name << " = " << k.get(c) << '\n';
  }
  return os.str();
}

std::string keys_help() {
  const AppConfig defaults = [] {
    AppConfig c;
    sync_derived(c);
    return c;
  }();
  std::ostringstream os;
  os << "Config keys ([section] key = default):\n";
  for (const auto& k : config_keys()) {
    std::string left = "  [" + k.section + "] " + k.name + " = " + k.get(defaults);
    if (left.size() < 44) left.resize(44, ' ');
    os << left << ' ' << k.help << '\n';
  }
  return os.str();
}

}  // namespace baa::cli
