#include <cmath>
#include <numeric>
#include <sstream>

#include "baa/common/error.hpp"
#include "baa/common/rng.hpp"
#include "baa/trainer/trainer.hpp"

namespace baa::trainer {

using tensor::Parameter;
using tensor::Tape;
using tensor::Var;

void TrainConfig::validate() const {
  weights.validate();
  auto positive = [](double v, const char* what) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be positive and finite");
  };
  positive(pretrain.lr, "pretrain.lr");
  positive(adapt.disc_lr, "adapt.disc_lr");
  positive(adapt.gen_lr, "adapt.gen_lr");
  positive(temperature, "temperature");
  positive(adapt.divergence_limit, "adapt.divergence_limit");
  if (!(lambda_ce >= 0) || !std::isfinite(lambda_ce)) throw ConfigError("lambda_ce must be non-negative");
  if (pretrain.epochs == 0 || pretrain.batch == 0) throw ConfigError("pretrain epochs and batch must be at least 1");
  if (adapt.epochs == 0 || adapt.batch == 0 || adapt.ce_sequences == 0) {
    throw ConfigError("adapt epochs, batch and ce_sequences must be at least 1");
  }
  const double ratio = adapt.disc_lr / adapt.gen_lr;
  if (std::abs(ratio - 3.0) > kRatioTolerance * 3.0) {
    std::ostringstream os;
    os << "adapt.disc_lr / adapt.gen_lr must be 3 (two-time-scale rule), got " << ratio;
    throw ConfigError(os.str());
  }
  if (adam_beta1 != 0.5 || adam_beta2 != 0.999) throw ConfigError("Adam betas must be (0.5, 0.999)");
  if (disc.in_channels != net.embed_dim) throw ConfigError("discriminator input channels must equal embed_dim");
  if (net.output_level >= net.levels) throw ConfigError("net.output_level must be below net.levels");
  if (!(eval.solver.confidence_floor >= 0 && eval.solver.confidence_floor <= 1)) {
    throw ConfigError("eval confidence floor must lie in [0, 1]");
  }
  if (eval.max_length == 0) throw ConfigError("eval.max_length must be at least 1");
}

std::vector<std::string> TrainConfig::deviations() const {
  const TrainConfig d;
  std::vector<std::string> out;
  auto note = [&](bool differs, const std::string& key, double value, double def) {
    if (!differs) return;
    std::ostringstream os;
    os << key << " = " << value << " (default " << def << ")";
    out.push_back(os.str());
  };
  note(pretrain.lr != d.pretrain.lr, "pretrain.lr", pretrain.lr, d.pretrain.lr);
  note(pretrain.epochs != d.pretrain.epochs, "pretrain.epochs", double(pretrain.epochs), double(d.pretrain.epochs));
  note(pretrain.batch != d.pretrain.batch, "pretrain.batch", double(pretrain.batch), double(d.pretrain.batch));
  note(adapt.epochs != d.adapt.epochs, "adapt.epochs", double(adapt.epochs), double(d.adapt.epochs));
  note(adapt.batch != d.adapt.batch, "adapt.batch", double(adapt.batch), double(d.adapt.batch));
  note(adapt.disc_lr != d.adapt.disc_lr, "adapt.disc_lr", adapt.disc_lr, d.adapt.disc_lr);
  note(adapt.gen_lr != d.adapt.gen_lr, "adapt.gen_lr", adapt.gen_lr, d.adapt.gen_lr);
  note(lambda_ce != d.lambda_ce, "lambda_ce", lambda_ce, d.lambda_ce);
  note(weights.alpha != d.weights.alpha, "alpha", weights.alpha, d.weights.alpha);
  note(weights.beta != d.weights.beta, "beta", weights.beta, d.weights.beta);
  return out;
}

std::string log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "phase,epoch,step,v_dts,v_dst,gen,ce,v_f\n";
  auto cell = [&](double v) {
    os << ',';
    if (!std::isnan(v)) os << v;
  };
  for (const auto& r : rows) {
    os << r.phase << ',' << r.epoch << ',' << r.step;
    cell(r.v_dts);
    cell(r.v_dst);
    cell(r.gen);
    cell(r.ce);
    cell(r.v_f);
    os << '\n';
  }
  return os.str();
}

RunState::RunState(const TrainConfig& c)
    : config(c),
      net(c.net, derive_seed(c.seed, 100)),
      d_ts("d_ts", c.disc, derive_seed(c.seed, 101)),
      d_st("d_st", c.disc, derive_seed(c.seed, 102)) {
  c.validate();
  pretrain_adam.config = {c.pretrain.lr, c.adam_beta1, c.adam_beta2, 1e-8};
  gen_adam.config = {c.adapt.gen_lr, c.adam_beta1, c.adam_beta2, 1e-8};
  disc_adam.config = {c.adapt.disc_lr, c.adam_beta1, c.adam_beta2, 1e-8};
}

std::vector<Parameter<float>*> RunState::disc_parameters() {
  auto out = d_ts.parameters();
  for (auto* p : d_st.parameters()) out.push_back(p);
  return out;
}

namespace {

enum Stream : std::uint64_t { kPretrainOrder = 1, kAdaptTarget = 2, kAdaptSource = 3, kAdaptCe = 4 };

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
  return p;
}

std::uint64_t order_seed(std::uint64_t seed, Stream s, std::size_t epoch) { return derive_seed(derive_seed(seed, s), epoch); }

double grad_norm(const std::vector<Parameter<float>*>& ps) {
  double s = 0;
  for (const auto* p : ps)
    for (float g : p->grad.values()) s += double(g) * g;
  return std::sqrt(s);
}

std::size_t first_buffer_frame(std::size_t t) { return t >= embednet::kBufferSize ? t - embednet::kBufferSize : 0; }

// Summed CE over every (sequence, t) pair of sequences laid out back to back
// in `y` starting at frame `base`.
struct CeSum {
  Var<float> sum;
  std::size_t active = 0;
};

CeSum sequence_ce(Var<float> y, std::size_t base, std::size_t cells,
                  const std::vector<const std::vector<FrameSample>*>& seqs, const std::vector<const SequenceGt*>& gts,
                  double temperature) {
  CeSum out;
  std::size_t frame = base;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const std::size_t len = seqs[s]->size();
    for (std::size_t t = 1; t < len; ++t) {
      const auto& gt = (*gts[s])[t - 1];
      const std::size_t active = gt.active();
      if (active == 0) continue;
      auto cur = tensor::slice(y, (frame + t) * cells, (frame + t + 1) * cells);
      auto buf = tensor::slice(y, (frame + first_buffer_frame(t)) * cells, (frame + t) * cells);
      auto term = embednet::ce_loss_sum(cur, buf, gt, temperature);
      out.sum = out.sum.valid() ? tensor::add(out.sum, term) : term;
      out.active += active;
    }
    frame += len;
  }
  return out;
}

std::size_t grid_cells(const FrameSample& f, std::size_t stride) { return (f.width / stride) * (f.height / stride); }

bool stop_requested(const Hooks& hooks, std::size_t epoch) { return hooks.until_epoch && epoch >= *hooks.until_epoch; }

}  // namespace

std::vector<SequenceGt> precompute_gt(const SequenceDataset& source, const Intrinsics& k, double radius) {
  std::vector<SequenceGt> out;
  out.reserve(source.sequences.size());
  for (std::size_t s = 0; s < source.sequences.size(); ++s) {
    const auto& seq = source.sequences[s];
    if (seq.size() < 2) throw InvalidInput(source.name + ": sequence " + std::to_string(s) + " has fewer than 2 frames");
    SequenceGt g;
    for (std::size_t t = 1; t < seq.size(); ++t) {
      std::vector<const FrameSample*> frames;
      for (std::size_t i = first_buffer_frame(t); i <= t; ++i) frames.push_back(&seq[i]);
      try {
        g.push_back(embednet::build_gt_correspondence(frames, k, radius, embednet::kStride));
      } catch (const InvalidInput& e) {
        throw InvalidInput(source.name + " sequence " + std::to_string(s) + " frame " + std::to_string(t) + ": " + e.what());
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

double dataset_radius(const SequenceDataset& source, const Intrinsics& k) {
  std::vector<const FrameSample*> frames;
  for (const auto& seq : source.sequences)
    for (const auto& f : seq) frames.push_back(&f);
  return embednet::correspondence_radius(frames, k, embednet::kStride);
}

void pretrain(RunState& state, const SequenceDataset& source, const Intrinsics& k, double radius, const Hooks& hooks) {
  const auto& cfg = state.config;
  cfg.validate();
  if (source.sequences.empty()) throw InvalidInput("pretrain: no source sequences");
  const auto gts = precompute_gt(source, k, radius);
  const auto params = state.net.parameters();
  const std::size_t n = source.sequences.size(), cells = grid_cells(source.sequences[0][0], state.net.stride());
  const std::size_t w = k.width, h = k.height;

  while (state.pretrain_epoch < cfg.pretrain.epochs && !stop_requested(hooks, state.pretrain_epoch)) {
    const auto order = permutation(n, order_seed(cfg.seed, kPretrainOrder, state.pretrain_epoch));
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.pretrain.batch) {
      std::vector<const std::vector<FrameSample>*> seqs;
      std::vector<const SequenceGt*> seq_gt;
      std::vector<const FrameSample*> frames;
      for (std::size_t i = b0; i < std::min(n, b0 + cfg.pretrain.batch); ++i) {
        seqs.push_back(&source.sequences[order[i]]);
        seq_gt.push_back(&gts[order[i]]);
        for (const auto& f : source.sequences[order[i]]) frames.push_back(&f);
      }
      Tape<float> tape;
      auto y = state.net.forward(tape, tape.constant(embednet::to_batch<float>(frames, w, h)), true);
      const auto ce = sequence_ce(y, 0, cells, seqs, seq_gt, cfg.temperature);
      if (ce.active == 0) continue;
      auto loss = tensor::scale(ce.sum, 1.0 / static_cast<double>(ce.active));
      tensor::zero_grads<float>(params);
      tape.backward(loss);
      if (!tensor::adam_step<float>(params, state.pretrain_adam)) throw Divergence("pretrain: non-finite gradient");

      LogRow row;
      row.phase = "pretrain";
      row.epoch = state.pretrain_epoch;
      row.step = ++state.step;
      row.ce = row.v_f = loss.value().item();
      state.log.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
    }
    ++state.pretrain_epoch;
    if (hooks.on_epoch) hooks.on_epoch("pretrain", state.pretrain_epoch);
  }
}

LogRow adapt_step(RunState& state, const AdaptBatch& batch, Direction direction, GradientProbe* probe) {
  const auto& cfg = state.config;
  const std::size_t ns = batch.source.size(), nt = batch.target.size();
  if (ns == 0 || nt == 0) throw InvalidInput("adapt_step: empty source or target batch");
  if (batch.ce_sequences.size() != batch.ce_gt.size()) throw InvalidInput("adapt_step: CE sequences and GT differ");

  std::vector<const FrameSample*> frames(batch.source);
  frames.insert(frames.end(), batch.target.begin(), batch.target.end());
  for (const auto* seq : batch.ce_sequences)
    for (const auto& f : *seq) frames.push_back(&f);
  const auto& f0 = *frames.front();
  const std::size_t cells = grid_cells(f0, state.net.stride());

  const auto net_params = state.net.parameters();
  const auto disc_params = state.disc_parameters();
  const bool use_ts = direction != Direction::s2t, use_st = direction != Direction::t2s;

  Tape<float> tape;
  auto y = state.net.forward(tape, tape.constant(embednet::to_batch<float>(frames, f0.width, f0.height)), true);
  auto adv = tensor::slice(y, 0, (ns + nt) * cells);

  LogRow row;
  row.phase = "adapt";
  row.epoch = state.adapt_epoch;
  tensor::zero_grads<float>(net_params);
  tensor::zero_grads<float>(disc_params);
  {
    // The discriminators see a copy of the embeddings on their own tape, so
    // nothing they do can reach F.
    Tape<float> dtape;
    auto e = dtape.constant(adv.value());
    Var<float> objective;
    if (use_ts) {
      auto o = state.d_ts.forward(dtape, e, true);
      auto v = adversary::disc_ts_value(tensor::slice(o, 0, ns), tensor::slice(o, ns, ns + nt), cfg.weights);
      row.v_dts = v.value().item();
      objective = v;
    }
    if (use_st) {
      auto o = state.d_st.forward(dtape, e, true);
      auto v = adversary::disc_st_value(tensor::slice(o, 0, ns), tensor::slice(o, ns, ns + nt), cfg.weights);
      row.v_dst = v.value().item();
      objective = objective.valid() ? tensor::add(objective, v) : v;
    }
    dtape.backward(tensor::scale(objective, -1.0));
    if (probe) {
      probe->net_after_disc = grad_norm(net_params);
      probe->disc_after_disc = grad_norm(disc_params);
    }
    if (!tensor::adam_step<float>(disc_params, state.disc_adam)) throw Divergence("adapt: non-finite discriminator gradient");
  }

  tensor::zero_grads<float>(disc_params);
  Var<float> ts_s, ts_t, st_s, st_t;
  if (use_ts) {
    auto o = state.d_ts.forward(tape, adv, true, true);
    ts_s = tensor::slice(o, 0, ns);
    ts_t = tensor::slice(o, ns, ns + nt);
  }
  if (use_st) {
    auto o = state.d_st.forward(tape, adv, true, true);
    st_s = tensor::slice(o, 0, ns);
    st_t = tensor::slice(o, ns, ns + nt);
  }
  auto gen = adversary::gen_value(ts_s, ts_t, st_s, st_t, cfg.weights, direction);
  row.gen = gen.value().item();
  auto total = gen;
  const auto ce = sequence_ce(y, ns + nt, cells, batch.ce_sequences, batch.ce_gt, cfg.temperature);
  row.ce = 0;
  if (ce.active > 0) {
    auto mean_ce = tensor::scale(ce.sum, 1.0 / static_cast<double>(ce.active));
    row.ce = mean_ce.value().item();
    total = tensor::add(total, tensor::scale(mean_ce, cfg.lambda_ce));
  }
  row.v_f = total.value().item();
  if (!(std::abs(row.gen) <= cfg.adapt.divergence_limit)) {
    std::ostringstream os;
    os << "adapt: |GEN| = " << std::abs(row.gen) << " exceeds " << cfg.adapt.divergence_limit << " at step "
       << state.step + 1;
    throw Divergence(os.str());
  }
  tape.backward(total);
  if (probe) {
    probe->disc_after_gen = grad_norm(disc_params);
    probe->net_after_gen = grad_norm(net_params);
  }
  if (!tensor::adam_step<float>(net_params, state.gen_adam)) throw Divergence("adapt: non-finite mapper gradient");
  row.step = ++state.step;
  return row;
}

void adapt(RunState& state, const SequenceDataset& source, const SequenceDataset& target, const Intrinsics& k,
           double radius, Direction direction, const Hooks& hooks) {
  const auto& cfg = state.config;
  cfg.validate();
  if (source.sequences.empty()) throw InvalidInput("adapt: no source sequences");
  std::vector<const FrameSample*> source_frames, target_frames;
  for (const auto& seq : source.sequences)
    for (const auto& f : seq) source_frames.push_back(&f);
  for (const auto& f : target.images) target_frames.push_back(&f);
  for (const auto& seq : target.sequences)
    for (const auto& f : seq) target_frames.push_back(&f);
  const std::size_t batch = cfg.adapt.batch;
  const std::size_t steps = target_frames.size() / batch;
  if (steps == 0) throw InvalidInput("adapt: fewer target images than one batch");
  if (source_frames.size() < batch) throw InvalidInput("adapt: fewer source frames than one batch");
  const auto gts = precompute_gt(source, k, radius);

  while (state.adapt_epoch < cfg.adapt.epochs && !stop_requested(hooks, state.adapt_epoch)) {
    const std::size_t e = state.adapt_epoch;
    const auto tperm = permutation(target_frames.size(), order_seed(cfg.seed, kAdaptTarget, e));
    const auto sperm = permutation(source_frames.size(), order_seed(cfg.seed, kAdaptSource, e));
    const auto cperm = permutation(source.sequences.size(), order_seed(cfg.seed, kAdaptCe, e));
    std::size_t scur = 0, ccur = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      AdaptBatch b;
      for (std::size_t i = 0; i < batch; ++i) {
        b.target.push_back(target_frames[tperm[s * batch + i]]);
        b.source.push_back(source_frames[sperm[scur++ % sperm.size()]]);
      }
      for (std::size_t i = 0; i < cfg.adapt.ce_sequences; ++i) {
        const std::size_t q = cperm[ccur++ % cperm.size()];
        b.ce_sequences.push_back(&source.sequences[q]);
        b.ce_gt.push_back(&gts[q]);
      }
      LogRow row;
      try {
        row = adapt_step(state, b, direction);
      } catch (const Divergence&) {
        if (hooks.divergence_dump) save_checkpoint(*hooks.divergence_dump, state);
        throw;
      }
      state.log.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
    }
    ++state.adapt_epoch;
    if (hooks.on_epoch) hooks.on_epoch("adapt", state.adapt_epoch);
  }
}

}  // namespace baa::trainer
