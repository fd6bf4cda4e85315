#include "baa/cli/app.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "baa/cli/config.hpp"
#include "baa/cli/manifest.hpp"
#include "baa/cli/plot.hpp"
#include "baa/common/error.hpp"
#include "baa/tensor/io.hpp"

namespace baa::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr double kExclusivityCut = 0.1;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string command;
  std::vector<std::string> arguments;
  Common common;
};

struct Resolved {
  AppConfig config;
  std::string snapshot;
};

Resolved resolve(const Context& ctx, bool seed_is_dataset) {
  Resolved r;
  r.config = ctx.common.config_path.empty() ? parse_config("") : load_config(ctx.common.config_path);
  if (ctx.common.seed) (seed_is_dataset ? r.config.dataset.seed : r.config.train.seed) = *ctx.common.seed;
  r.config.dataset.validate();
  r.config.train.validate();
  for (const auto& d : r.config.train.deviations()) ctx.err << "baa: note: " << d << '\n';
  r.snapshot = format_config(r.config);
  return r;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  return out;
}

synthworld::Datasets load_data(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) {
    throw IoError("no dataset at " + dir + " (manifest.json missing); run `baa gen-data --out " + dir + "` first");
  }
  return synthworld::read_datasets(dir);
}

fs::path checkpoint_dir(const std::string& path, const std::string& remedy) {
  const fs::path p(path);
  if (fs::exists(p / "checkpoint" / "optimizer_state.json")) return p / "checkpoint";
  if (fs::exists(p / "optimizer_state.json")) return p;
  throw MissingCheckpoint("no checkpoint at " + path + "; " + remedy);
}

void write_manifest(const Context& ctx, const Resolved& r, const fs::path& out, const std::vector<fs::path>& inputs) {
  RunManifest m;
  m.command = ctx.command;
  m.arguments = ctx.arguments;
  m.config_path = ctx.common.config_path;
  m.config_snapshot = r.snapshot;
  m.input_hash = sha256_hex(r.snapshot + '\n' + (inputs.empty() ? std::string() : content_hash(inputs)));
  m.output_dir = ctx.common.out;
  tensor::write_file(out / "run_manifest.json", m.to_json());
}

std::string config_hash(const Resolved& r) { return sha256_hex(r.snapshot); }

Series curve(const std::string& label, const std::vector<double>& ys) {
  Series s{label, {}, ys};
  for (std::size_t i = 0; i < ys.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
  return s;
}

Series histogram_series(const std::string& label, const embednet::Histogram& h) {
  Series s{label, {}, {}};
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    s.x.push_back(static_cast<double>(b) / static_cast<double>(h.counts.size()));
    s.y.push_back(h.total ? static_cast<double>(h.counts[b]) / static_cast<double>(h.total) : 0.0);
  }
  return s;
}

void write_plot(const fs::path& out, const std::string& stem, const std::vector<Series>& series, const PlotSpec& spec) {
  tensor::write_file(out / (stem + ".svg"), line_plot_svg(series, spec));
  tensor::write_file(out / (stem + ".csv"), series_csv(series));
}

void write_ape_plot(const fs::path& out, const std::vector<Series>& series, const std::string& title) {
  write_plot(out, "ape_curve", series, {title, "sequence length (frames)", "APE (mm)", false});
}

void write_loss_plot(const fs::path& out, const std::vector<trainer::LogRow>& log) {
  Series ce{"CE", {}, {}}, gen{"GEN", {}, {}};
  for (const auto& r : log) {
    ce.x.push_back(static_cast<double>(r.step));
    ce.y.push_back(r.ce);
    if (r.phase == "adapt") {
      gen.x.push_back(static_cast<double>(r.step));
      gen.y.push_back(r.gen);
    }
  }
  std::vector<Series> s{ce};
  if (!gen.x.empty()) s.push_back(gen);
  write_plot(out, "training_loss", s, {"Training losses", "step", "loss", false});
}

ordered_json summary(const trainer::EvalReport& r) {
  ordered_json j;
  j["ape5"] = r.ape5;
  j["ape50"] = r.ape50;
  j["ate50"] = r.ate50;
  j["fallback_count"] = r.fallback_count;
  return j;
}

void write_metrics(const fs::path& out, const trainer::EvalReport& report, const Resolved& r, const ordered_json& extra) {
  auto j = ordered_json::parse(trainer::metrics_json(report, r.config.train.seed, config_hash(r)));
  for (const auto& [k, v] : extra.items()) j[k] = v;
  tensor::write_file(out / "metrics.json", j.dump(2) + "\n");
}

trainer::Hooks progress_hooks(const Context& ctx, trainer::RunState& state, const fs::path& ckpt) {
  trainer::Hooks h;
  h.on_epoch = [&ctx, &state, ckpt](const std::string& phase, std::size_t epoch) {
    double ce = 0, gen = 0;
    std::size_t n = 0;
    for (const auto& row : state.log)
      if (row.phase == phase && row.epoch + 1 == epoch) ce += row.ce, gen += std::isnan(row.gen) ? 0 : row.gen, ++n;
    ctx.out << phase << " epoch " << epoch << ": mean CE " << (n ? ce / n : 0.0);
    if (phase == "adapt") ctx.out << ", mean GEN " << (n ? gen / n : 0.0);
    ctx.out << std::endl;
    trainer::save_checkpoint(ckpt, state);
  };
  return h;
}

// ---- commands ---------------------------------------------------------------

int cmd_config(const Context& ctx) {
  const auto r = resolve(ctx, false);
  if (ctx.common.out.empty()) ctx.out << r.snapshot;
  else tensor::write_file(ctx.common.out, r.snapshot);
  return kOk;
}

int cmd_gen_data(const Context& ctx) {
  const auto r = resolve(ctx, true);
  const auto out = prepare_out(ctx.common.out);
  const auto data = synthworld::build_datasets(r.config.dataset);
  synthworld::write_datasets(out, data);
  write_manifest(ctx, r, out, {});
  ctx.out << "wrote " << data.source_train.sequences.size() << " source sequences, " << data.target_train.images.size()
          << " target images, " << data.source_test.sequences.size() << "+" << data.target_test.sequences.size()
          << " test trajectories to " << out.string() << std::endl;
  return kOk;
}

int cmd_pretrain(const Context& ctx, const std::string& data_dir, bool resume) {
  const auto r = resolve(ctx, false);
  const auto out = prepare_out(ctx.common.out);
  const auto data = load_data(data_dir);
  const double radius = trainer::dataset_radius(data.source_train, data.intrinsics);
  trainer::RunState state(r.config.train);
  const auto ckpt = out / "checkpoint";
  if (resume && fs::exists(ckpt / "optimizer_state.json")) {
    trainer::load_checkpoint(ckpt, state);
    ctx.out << "resuming after pretrain epoch " << state.pretrain_epoch << std::endl;
  }
  trainer::pretrain(state, data.source_train, data.intrinsics, radius, progress_hooks(ctx, state, ckpt));
  trainer::save_checkpoint(ckpt, state);

  const auto report = trainer::evaluate(state.net, data.source_test, data.intrinsics, r.config.train);
  const auto baseline = trainer::evaluate_static(data.source_test, r.config.train.eval.max_length);
  const double top1 = trainer::top1_accuracy(state.net, data.source_test, data.intrinsics, radius, r.config.train.temperature);
  const auto hist = trainer::split_histogram(state.net, data.source_test, r.config.train.temperature);
  ordered_json extra;
  extra["split"] = "source_test";
  extra["top1_accuracy"] = top1;
  extra["correspondence_radius"] = radius;
  extra["static_baseline"] = summary(baseline);
  extra["source_exclusivity_mass_below_0.1"] = hist.mass_below(kExclusivityCut);
  write_metrics(out, report, r, extra);
  tensor::write_file(out / "training_log.csv", trainer::log_csv(state.log));
  write_ape_plot(out, {curve("pretrained (source_test)", report.ape_curve), curve("static baseline", baseline.ape_curve)},
                 "APE over sequence length, source domain");
  write_loss_plot(out, state.log);
  write_manifest(ctx, r, out, {fs::path(data_dir) / "manifest.json"});
  ctx.out << "source_test: top-1 " << top1 << ", APE-5 " << report.ape5 << " mm (static " << baseline.ape5
          << " mm), APE-50 " << report.ape50 << " mm" << std::endl;
  return kOk;
}

std::optional<trainer::Direction> parse_mode(const std::string& mode) {
  if (mode == "baa") return trainer::Direction::both;
  if (mode == "s2t") return trainer::Direction::s2t;
  if (mode == "t2s") return trainer::Direction::t2s;
  return std::nullopt;  // none
}

int cmd_adapt(const Context& ctx, const std::string& data_dir, const std::string& from, const std::string& mode,
              bool resume) {
  const auto r = resolve(ctx, false);
  const auto out = prepare_out(ctx.common.out);
  const auto data = load_data(data_dir);
  const auto from_ckpt = checkpoint_dir(from, "run `baa pretrain --data " + data_dir + " --out " + from + "` first");
  const double radius = trainer::dataset_radius(data.source_train, data.intrinsics);
  const auto& tc = r.config.train;

  trainer::RunState state(tc);
  trainer::load_checkpoint(from_ckpt, state);
  if (state.pretrain_epoch < tc.pretrain.epochs) {
    throw MissingCheckpoint("checkpoint at " + from + " stopped after pretrain epoch " + std::to_string(state.pretrain_epoch) +
                            " of " + std::to_string(tc.pretrain.epochs) + "; finish it with `baa pretrain --resume`");
  }
  const auto pre_target = trainer::evaluate(state.net, data.target_test, data.intrinsics, tc);
  const auto pre_source = trainer::evaluate(state.net, data.source_test, data.intrinsics, tc);
  const auto pre_hist_t = trainer::split_histogram(state.net, data.target_test, tc.temperature);
  const auto pre_hist_s = trainer::split_histogram(state.net, data.source_test, tc.temperature);

  const auto ckpt = out / "checkpoint";
  const auto direction = parse_mode(mode);
  if (direction) {
    if (resume && fs::exists(ckpt / "optimizer_state.json")) {
      trainer::load_checkpoint(ckpt, state);
      ctx.out << "resuming after adapt epoch " << state.adapt_epoch << std::endl;
    }
    auto hooks = progress_hooks(ctx, state, ckpt);
    hooks.divergence_dump = out / "diverged";
    trainer::adapt(state, data.source_train, data.target_train, data.intrinsics, radius, *direction, hooks);
  }
  trainer::save_checkpoint(ckpt, state);

  const auto post_target = trainer::evaluate(state.net, data.target_test, data.intrinsics, tc);
  const auto post_source = trainer::evaluate(state.net, data.source_test, data.intrinsics, tc);
  const auto post_hist_t = trainer::split_histogram(state.net, data.target_test, tc.temperature);
  const auto post_hist_s = trainer::split_histogram(state.net, data.source_test, tc.temperature);

  ordered_json extra;
  extra["split"] = "target_test";
  extra["mode"] = mode;
  extra["pre_adaptation"] = summary(pre_target);
  extra["source"] = summary(post_source);
  extra["source_pre_adaptation"] = summary(pre_source);
  ordered_json excl;
  excl["target_pre"] = pre_hist_t.mass_below(kExclusivityCut);
  excl["target_post"] = post_hist_t.mass_below(kExclusivityCut);
  excl["source_pre"] = pre_hist_s.mass_below(kExclusivityCut);
  excl["source_post"] = post_hist_s.mass_below(kExclusivityCut);
  extra["exclusivity_mass_below_0.1"] = excl;
  write_metrics(out, post_target, r, extra);
  tensor::write_file(out / "training_log.csv", trainer::log_csv(state.log));
  write_ape_plot(out,
                 {curve("target, pre-adaptation", pre_target.ape_curve), curve("target, " + mode, post_target.ape_curve),
                  curve("source, " + mode, post_source.ape_curve)},
                 "APE over sequence length");
  write_plot(out, "exclusivity",
             {histogram_series("target pre", pre_hist_t), histogram_series("target post", post_hist_t),
              histogram_series("source pre", pre_hist_s), histogram_series("source post", post_hist_s)},
             {"Exclusivity histograms", "1 - p(self)", "fraction of vectors", true});
  write_loss_plot(out, state.log);
  write_manifest(ctx, r, out, {fs::path(data_dir) / "manifest.json", from_ckpt});
  ctx.out << "target_test APE-50: " << pre_target.ape50 << " mm before, " << post_target.ape50 << " mm after (" << mode
          << "); source APE-5 " << post_source.ape5 << " mm" << std::endl;
  return kOk;
}

int cmd_eval(const Context& ctx, const std::string& data_dir, const std::vector<std::string>& checkpoints,
             std::vector<std::string> labels, const std::string& split) {
  const auto r = resolve(ctx, false);
  const auto out = prepare_out(ctx.common.out);
  const auto data = load_data(data_dir);
  const auto& test = split == "source" ? data.source_test : data.target_test;
  if (!labels.empty() && labels.size() != checkpoints.size()) throw ConfigError("eval: give one --label per --checkpoint");
  std::vector<Series> curves;
  ordered_json models = ordered_json::array();
  std::optional<trainer::EvalReport> first;
  std::vector<trainer::LogRow> first_log;
  std::vector<fs::path> inputs{fs::path(data_dir) / "manifest.json"};
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto ckpt = checkpoint_dir(checkpoints[i], "train it with `baa pretrain` or `baa adapt` first");
    inputs.push_back(ckpt);
    trainer::RunState state(r.config.train);
    trainer::load_checkpoint(ckpt, state);
    const auto report = trainer::evaluate(state.net, test, data.intrinsics, r.config.train);
    const std::string label = labels.empty() ? checkpoints[i] : labels[i];
    curves.push_back(curve(label, report.ape_curve));
    auto m = summary(report);
    m["label"] = label;
    models.push_back(m);
    ctx.out << label << ": APE-5 " << report.ape5 << " mm, APE-50 " << report.ape50 << " mm, ATE-50 " << report.ate50
            << " mm, fallbacks " << report.fallback_count << std::endl;
    if (!first) first = report, first_log = state.log;
  }
  ordered_json extra;
  extra["split"] = test.name;
  extra["models"] = models;
  write_metrics(out, *first, r, extra);
  tensor::write_file(out / "training_log.csv", trainer::log_csv(first_log));
  write_ape_plot(out, curves, "APE over sequence length, " + test.name);
  write_manifest(ctx, r, out, inputs);
  return kOk;
}

embednet::Histogram read_hist_column(const fs::path& csv, std::size_t column) {
  embednet::Histogram h;
  std::istringstream in(tensor::read_file(csv));
  std::string line;
  std::getline(in, line);
  std::size_t b = 0;
  while (std::getline(in, line) && b < h.counts.size()) {
    std::istringstream row(line);
    std::string cell;
    for (std::size_t c = 0; c <= column; ++c) std::getline(row, cell, ',');
    h.counts[b++] = std::stoull(cell);
  }
  for (auto c : h.counts) h.total += c;
  return h;
}

int cmd_histogram(const Context& ctx, const std::string& data_dir, const std::string& checkpoint, const std::string& phase) {
  const auto r = resolve(ctx, false);
  const auto out = prepare_out(ctx.common.out);
  const auto data = load_data(data_dir);
  const auto ckpt = checkpoint_dir(checkpoint, phase == "pre" ? "run `baa pretrain` first" : "run `baa adapt` first");
  trainer::RunState state(r.config.train);
  trainer::load_checkpoint(ckpt, state);
  const auto hs = trainer::split_histogram(state.net, data.source_test, r.config.train.temperature);
  const auto ht = trainer::split_histogram(state.net, data.target_test, r.config.train.temperature);
  const auto report = trainer::evaluate(state.net, data.target_test, data.intrinsics, r.config.train);

  std::ostringstream csv;
  csv << "bin_left,source,target\n";
  for (std::size_t b = 0; b < hs.counts.size(); ++b)
    csv << static_cast<double>(b) / static_cast<double>(hs.counts.size()) << ',' << hs.counts[b] << ',' << ht.counts[b] << '\n';
  tensor::write_file(out / ("histogram_" + phase + ".csv"), csv.str());
  const PlotSpec spec{"Exclusivity histogram (" + phase + "-adaptation)", "1 - p(self)", "fraction of vectors", true};
  tensor::write_file(out / ("histogram_" + phase + ".svg"),
                     line_plot_svg({histogram_series("source", hs), histogram_series("target", ht)}, spec));

  const std::string other = phase == "pre" ? "post" : "pre";
  if (fs::exists(out / ("histogram_" + other + ".csv"))) {
    const auto os = read_hist_column(out / ("histogram_" + other + ".csv"), 1);
    const auto ot = read_hist_column(out / ("histogram_" + other + ".csv"), 2);
    std::vector<Series> s{histogram_series("source " + phase, hs), histogram_series("target " + phase, ht),
                          histogram_series("source " + other, os), histogram_series("target " + other, ot)};
    tensor::write_file(out / "histogram_overlay.svg",
                       line_plot_svg(s, {"Exclusivity histograms, pre vs post adaptation", "1 - p(self)", "fraction of vectors", true}));
  }
  ordered_json extra;
  extra["split"] = "target_test";
  extra["phase"] = phase;
  extra["source_mass_below_0.1"] = hs.mass_below(kExclusivityCut);
  extra["target_mass_below_0.1"] = ht.mass_below(kExclusivityCut);
  write_metrics(out, report, r, extra);
  tensor::write_file(out / "training_log.csv", trainer::log_csv(state.log));
  write_ape_plot(out, {curve("target (" + phase + ")", report.ape_curve)}, "APE over sequence length, target domain");
  write_manifest(ctx, r, out, {fs::path(data_dir) / "manifest.json", ckpt});
  ctx.out << phase << ": exclusivity mass below 0.1, source " << hs.mass_below(kExclusivityCut) << ", target "
          << ht.mass_below(kExclusivityCut) << std::endl;
  return kOk;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Balanced adversarial adaptation of visual odometry embeddings on synthetic scenes", "baa"};
  app.require_subcommand(1);
  app.footer(
      "\nExit codes: 0 ok, 1 other failure, 2 config error, 3 I/O error, 4 missing checkpoint, 5 divergence.\n\n" +
      keys_help());

  Context ctx{out, err, {}, {}, {}};
  for (int i = 1; i < argc; ++i) ctx.arguments.emplace_back(argv[i]);
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", ctx.common.config_path, "INI config file (defaults apply to absent keys)");
    sub->add_option("--seed", ctx.common.seed, "override the seed");
    auto* o = sub->add_option("--out", ctx.common.out, "output directory");
    if (out_required) o->required();
  };
  std::string data_dir, from, mode = "baa", ablate_mode, split = "target", phase;
  std::vector<std::string> checkpoints, labels;
  bool resume = false;

  auto* config = app.add_subcommand("config", "print the resolved config (or write it to --out)");
  add_common(config, false);
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic datasets");
  add_common(gen, true);
  auto* pre = app.add_subcommand("pretrain", "train the embedding network on source sequences");
  add_common(pre, true);
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_flag("--resume", resume, "continue from the checkpoint in --out");
  auto* ad = app.add_subcommand("adapt", "adversarial adaptation of a pretrained network");
  add_common(ad, true);
  ad->add_option("--data", data_dir, "dataset directory")->required();
  ad->add_option("--from", from, "pretrain run or checkpoint directory")->required();
  ad->add_option("--mode", mode, "baa (balanced), s2t or t2s")->check(CLI::IsMember({"baa", "s2t", "t2s"}));
  ad->add_flag("--resume", resume, "continue from the checkpoint in --out");
  auto* ev = app.add_subcommand("eval", "visual odometry evaluation of one or more checkpoints");
  add_common(ev, true);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoints, "run or checkpoint directory (repeatable)")->required();
  ev->add_option("--label", labels, "curve label per checkpoint");
  ev->add_option("--split", split, "target or source")->check(CLI::IsMember({"target", "source"}));
  auto* ab = app.add_subcommand("ablate", "adapt with one scheme and evaluate on the target domain");
  add_common(ab, true);
  ab->add_option("--data", data_dir, "dataset directory")->required();
  ab->add_option("--from", from, "pretrain run or checkpoint directory")->required();
  ab->add_option("--mode", ablate_mode, "baa, s2t, t2s or none")->required()->check(CLI::IsMember({"baa", "s2t", "t2s", "none"}));
  ab->add_flag("--resume", resume, "continue from the checkpoint in --out");
  auto* hi = app.add_subcommand("histogram", "exclusivity histograms of source and target test frames");
  add_common(hi, true);
  hi->add_option("--data", data_dir, "dataset directory")->required();
  hi->add_option("--checkpoint", checkpoints, "run or checkpoint directory")->required()->expected(1);
  hi->add_option("--phase", phase, "pre or post")->required()->check(CLI::IsMember({"pre", "post"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kOk : kConfigError;
  }

  auto* sub = app.get_subcommands().front();
  ctx.command = sub->get_name();
  try {
    if (sub == config) return cmd_config(ctx);
    if (sub == gen) return cmd_gen_data(ctx);
    if (sub == pre) return cmd_pretrain(ctx, data_dir, resume);
    if (sub == ad) return cmd_adapt(ctx, data_dir, from, mode, resume);
    if (sub == ev) return cmd_eval(ctx, data_dir, checkpoints, labels, split);
    if (sub == ab) return cmd_adapt(ctx, data_dir, from, ablate_mode, resume);
    if (sub == hi) return cmd_histogram(ctx, data_dir, checkpoints.front(), phase);
  } catch (const ConfigError& e) {
    err << "baa " << ctx.command << ": config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "baa " << ctx.command << ": I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const MissingCheckpoint& e) {
    err << "baa " << ctx.command << ": missing checkpoint: " << e.what() << '\n';
    return kMissingCheckpoint;
  } catch (const Divergence& e) {
    err << "baa " << ctx.command << ": diverged: " << e.what() << " (state dumped under " << ctx.common.out
        << "/diverged)\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "baa " << ctx.command << ": error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace baa::cli
