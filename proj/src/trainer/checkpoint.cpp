#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "baa/common/error.hpp"
#include "baa/tensor/io.hpp"
#include "baa/trainer/trainer.hpp"

namespace baa::trainer {
namespace {

constexpr int kCheckpointVersion = 1;

template <typename Net>
void add_named(std::vector<tensor::NamedTensor>& out, Net& net) {
  for (auto* p : net.parameters()) out.push_back({p->name, &p->value});
  for (auto b : net.buffers()) out.push_back({b.name, b.tensor});
}

std::vector<tensor::NamedTensor> all_tensors(RunState& s) {
  std::vector<tensor::NamedTensor> out;
  add_named(out, s.net);
  add_named(out, s.d_ts);
  add_named(out, s.d_st);
  return out;
}

nlohmann::json number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double number(const nlohmann::json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, RunState& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_checkpoint: cannot create " + dir.string() + ": " + ec.message());
  tensor::save_named(dir, all_tensors(s));
  const auto net_params = s.net.parameters();
  const auto disc_params = s.disc_parameters();

  nlohmann::ordered_json state;
  state["version"] = kCheckpointVersion;
  state["seed"] = s.config.seed;
  state["pretrain_epoch"] = s.pretrain_epoch;
  state["adapt_epoch"] = s.adapt_epoch;
  state["step"] = s.step;
  state["pretrain_adam"] = nlohmann::json::parse(tensor::save_adam(dir, "adam_pretrain", net_params, s.pretrain_adam));
  state["gen_adam"] = nlohmann::json::parse(tensor::save_adam(dir, "adam_gen", net_params, s.gen_adam));
  state["disc_adam"] = nlohmann::json::parse(tensor::save_adam(dir, "adam_disc", disc_params, s.disc_adam));
  tensor::write_file(dir / "optimizer_state.json", state.dump(2) + "\n");

  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : s.log) {
    log.push_back({r.phase, r.epoch, r.step, number(r.v_dts), number(r.v_dst), number(r.gen), number(r.ce), number(r.v_f)});
  }
  tensor::write_file(dir / "log.json", log.dump() + "\n");
}

void load_checkpoint(const std::filesystem::path& dir, RunState& s) {
  if (!std::filesystem::exists(dir / "optimizer_state.json")) {
    throw IoError("load_checkpoint: no checkpoint in " + dir.string() + " (optimizer_state.json missing)");
  }
  nlohmann::json state, log;
  try {
    state = nlohmann::json::parse(tensor::read_file(dir / "optimizer_state.json"));
    log = nlohmann::json::parse(tensor::read_file(dir / "log.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: malformed state in " + dir.string() + ": " + e.what());
  }
  if (state.value("version", 0) != kCheckpointVersion) throw IoError("load_checkpoint: unsupported checkpoint version");
  tensor::load_named(dir, all_tensors(s));
  const auto net_params = s.net.parameters();
  const auto disc_params = s.disc_parameters();
  tensor::load_adam(dir, "adam_pretrain", state.at("pretrain_adam").dump(), net_params, s.pretrain_adam);
  tensor::load_adam(dir, "adam_gen", state.at("gen_adam").dump(), net_params, s.gen_adam);
  tensor::load_adam(dir, "adam_disc", state.at("disc_adam").dump(), disc_params, s.disc_adam);
  s.pretrain_epoch = state.at("pretrain_epoch").get<std::size_t>();
  s.adapt_epoch = state.at("adapt_epoch").get<std::size_t>();
  s.step = state.at("step").get<std::size_t>();
  s.log.clear();
  for (const auto& r : log) {
    LogRow row;
    row.phase = r.at(0).get<std::string>();
    row.epoch = r.at(1).get<std::size_t>();
    row.step = r.at(2).get<std::size_t>();
    row.v_dts = number(r.at(3));
    row.v_dst = number(r.at(4));
    row.gen = number(r.at(5));
    row.ce = number(r.at(6));
    row.v_f = number(r.at(7));
    s.log.push_back(row);
  }
}

}  // namespace baa::trainer
