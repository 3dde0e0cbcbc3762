#include "djscc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "djscc/error.hpp"
#include "djscc/metrics.hpp"
#include "djscc/ops.hpp"
#include "djscc/rng.hpp"

namespace djscc {

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::TwoStage: return "two_stage";
    case Schedule::Iterative: return "iterative";
    case Schedule::Simultaneous: return "simultaneous";
  }
  return "?";
}

Schedule parse_schedule(const std::string& text) {
  if (text == "two_stage" || text == "proposed") return Schedule::TwoStage;
  if (text == "iterative") return Schedule::Iterative;
  if (text == "simultaneous") return Schedule::Simultaneous;
  throw ConfigError("unknown schedule '" + text + "' (expected two_stage, iterative or simultaneous)");
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (!(lr >= 0.0) || !std::isfinite(lr)) out.push_back("lr must be a finite value >= 0");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (snr_set_db.empty()) out.push_back("snr_set must not be empty");
  for (double s : snr_set_db) {
    if (!std::isfinite(s)) out.push_back("snr_set entries must be finite");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("adam beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("adam beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) out.push_back("adam eps must be > 0");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------

AdamState::AdamState(const Model& model, double b1, double b2, double e) : beta1(b1), beta2(b2), eps(e) {
  for (const auto& it : model.params.items()) {
    m.emplace_back(it.tensor.numel(), 0.0);
    v.emplace_back(it.tensor.numel(), 0.0);
  }
}

void adam_step(Model& model, AdamState& state, double lr) {
  if (model.frozen()) throw Error("adam_step on frozen model '" + model.label() + "'");
  auto& items = model.params.items();
  if (state.m.size() != items.size()) throw ShapeError("Adam state does not match model '" + model.label() + "'");
  for (std::size_t p = 0; p < items.size(); ++p) {
    const auto& g = items[p].tensor.grad();
    if (state.m[p].size() != items[p].tensor.numel()) {
      throw ShapeError("Adam moment for " + items[p].name + " has the wrong size");
    }
    if (g) {
      for (double x : *g) {
        if (!std::isfinite(x)) throw NumericError("non-finite gradient in " + items[p].name);
      }
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor& t = items[p].tensor;
    const auto& g = t.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      t[i] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
    t.clear_grad();
  }
}

Var mse_loss(Var target, Var reconstruction) { return mse(reconstruction, target); }

double mse_loss(const Tensor& target, const Tensor& reconstruction) { return mse_value(reconstruction, target); }

// ---------------------------------------------------------------------------

namespace {

// Stream constants separating the RNG of each training phase.
constexpr std::uint64_t kPhaseStage1 = 0x5331;
constexpr std::uint64_t kPhaseStage2 = 0x5332;
constexpr std::uint64_t kPhaseEndToEnd = 0x4545;
constexpr std::uint64_t kPhaseSimultaneous = 0x5349;

Rng epoch_rng(std::uint64_t seed, std::uint64_t phase, std::size_t epoch) {
  return Rng(mix_seed(seed, phase)).split(epoch);
}

struct Batch {
  std::vector<std::size_t> indices;
  double snr_db;
};

// Shuffled minibatches for one epoch; the last one may be short.
std::vector<Batch> plan_epoch(std::size_t n, const TrainConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t b = 0; b < n; b += cfg.batch_size) {
    Batch batch;
    batch.indices.assign(order.begin() + b, order.begin() + std::min(n, b + cfg.batch_size));
    batch.snr_db = cfg.snr_set_db[rng.uniform_index(cfg.snr_set_db.size())];
    out.push_back(std::move(batch));
  }
  return out;
}

void require_data(const ImageBatch& data) {
  if (data.size() == 0) throw ConfigError("training data is empty");
}

void check_loss(const Var& loss, const std::string& phase, std::size_t epoch, std::size_t batch, double snr) {
  if (!std::isfinite(loss.value().item())) {
    std::ostringstream msg;
    msg << "non-finite loss during " << phase << " (epoch " << epoch << ", batch " << batch << ", snr " << snr
        << " dB); models hold the last finite state";
    throw NumericError(msg.str());
  }
}

void emit(const TrainConfig& cfg, LossCurve& curve, LossPoint p) {
  if (cfg.on_epoch) cfg.on_epoch(p);
  curve.push_back(std::move(p));
}

/// One epoch of joint encoder/decoder training.
double pair_epoch(Model& encoder, Model& decoder, AdamState& enc_state, AdamState& dec_state, const ImageBatch& data,
                  const TrainConfig& cfg, Rng rng, const std::string& phase, std::size_t epoch) {
  const auto batches = plan_epoch(data.size(), cfg, rng);
  double total = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Tape tape;
    Var x = tape.constant(data.gather(batches[b].indices));
    Var s = power_normalize(forward(encoder, x, batches[b].snr_db));
    const auto real = draw_realization(cfg.channel, batches[b].snr_db, s.shape(), rng, cfg.noiseless);
    Var loss = mse_loss(x, forward(decoder, transmit(s, real), batches[b].snr_db));
    check_loss(loss, phase, epoch, b, batches[b].snr_db);
    tape.backward(loss);
    adam_step(encoder, enc_state, cfg.lr);
    adam_step(decoder, dec_state, cfg.lr);
    total += loss.value().item() * static_cast<double>(batches[b].indices.size());
  }
  return total / static_cast<double>(data.size());
}

// Gathers rows [N, ...] of a cached latent tensor.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(t.data().begin() + idx[i] * per, per, out.data().begin() + i * per);
  }
  return out;
}

std::vector<double> encoder_grad(const Model& encoder) {
  std::vector<double> out;
  for (const auto& it : encoder.params.items()) {
    if (it.tensor.grad()) {
      out.insert(out.end(), it.tensor.grad()->begin(), it.tensor.grad()->end());
    } else {
      out.insert(out.end(), it.tensor.numel(), 0.0);
    }
  }
  return out;
}

void clear_grads(Model& m) {
  for (auto& it : m.params.items()) it.tensor.clear_grad();
}

// Summed per-decoder losses of one shared encoding.
std::vector<Var> simultaneous_losses(Tape& tape, Model& encoder, std::vector<Model>& decoders, const Tensor& images,
                                     double snr_db, const std::vector<ChannelRealization>& reals,
                                     const std::vector<bool>& active) {
  Var x = tape.constant(images);
  Var s = power_normalize(forward(encoder, x, snr_db));
  std::vector<Var> losses;
  for (std::size_t k = 0; k < decoders.size(); ++k) {
    if (!active[k]) continue;
    losses.push_back(mse_loss(x, forward(decoders[k], transmit(s, reals[k]), snr_db)));
  }
  return losses;
}

Var sum_losses(const std::vector<Var>& losses) {
  Var total = losses.front();
  for (std::size_t k = 1; k < losses.size(); ++k) total = add(total, losses[k]);
  return total;
}

}  // namespace

LossCurve train_stage1(Model& encoder, Model& symmetric, const ImageBatch& data, const TrainConfig& cfg) {
  cfg.validate();
  require_data(data);
  if (encoder.arch.role != ModelRole::Encoder || symmetric.arch.role != ModelRole::SymmetricDecoder) {
    throw Error("stage 1 trains an encoder with its symmetric decoder");
  }
  if (symmetric.arch.latent != encoder.arch.latent) {
    throw ShapeError("symmetric decoder latent " + shape_str(symmetric.arch.latent) + " does not match encoder " +
                     shape_str(encoder.arch.latent));
  }
  AdamState es(encoder, cfg), ds(symmetric, cfg);
  LossCurve curve;
  for (std::size_t e = 0; e < cfg.epochs_stage1; ++e) {
    const double loss =
        pair_epoch(encoder, symmetric, es, ds, data, cfg, epoch_rng(cfg.seed, kPhaseStage1, e), "stage1", e);
    emit(cfg, curve, {"stage1", e, symmetric.label(), loss});
  }
  return curve;
}

std::uint64_t freeze_encoder(Model& encoder) {
  encoder.freeze();
  return encoder.checksum();
}

std::uint64_t stage2_seed(std::uint64_t run_seed, const Model& decoder) {
  const std::string label = decoder.label() + "#" + std::to_string(decoder.arch.depth_scale);
  return mix_seed(mix_seed(run_seed, kPhaseStage2), fnv1a(std::vector<std::uint8_t>(label.begin(), label.end())));
}

LossCurve train_stage2_decoder(const Model& anchor, Model& decoder, const ImageBatch& data, const TrainConfig& cfg,
                               std::uint64_t decoder_seed) {
  cfg.validate();
  require_data(data);
  if (!anchor.frozen()) throw Error("stage 2 requires a frozen anchor encoder; call freeze_encoder first");
  if (anchor.arch.latent != decoder.arch.latent) {
    throw ShapeError("decoder latent " + shape_str(decoder.arch.latent) + " does not match anchor latent " +
                     shape_str(anchor.arch.latent));
  }
  // The anchor is fixed, so its normalized latents are computed once per SNR.
  std::vector<Tensor> cached;
  for (double snr : cfg.snr_set_db) {
    Tensor z = encode(anchor, data.images, snr);
    Tape tape;
    cached.push_back(power_normalize(tape.constant(std::move(z))).value());
  }
  AdamState ds(decoder, cfg);
  LossCurve curve;
  for (std::size_t e = 0; e < cfg.epochs_per_decoder; ++e) {
    Rng rng = Rng(decoder_seed).split(e);
    const auto batches = plan_epoch(data.size(), cfg, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::size_t si = static_cast<std::size_t>(
          std::find(cfg.snr_set_db.begin(), cfg.snr_set_db.end(), batches[b].snr_db) - cfg.snr_set_db.begin());
      Tape tape;
      Var x = tape.constant(data.gather(batches[b].indices));
      Var s = tape.constant(gather_rows(cached[si], batches[b].indices));
      const auto real = draw_realization(cfg.channel, batches[b].snr_db, s.shape(), rng, cfg.noiseless);
      Var loss = mse_loss(x, forward(decoder, transmit(s, real), batches[b].snr_db));
      check_loss(loss, "stage2", e, b, batches[b].snr_db);
      tape.backward(loss);
      adam_step(decoder, ds, cfg.lr);
      total += loss.value().item() * static_cast<double>(batches[b].indices.size());
    }
    emit(cfg, curve, {"stage2", e, decoder.label(), total / static_cast<double>(data.size())});
  }
  return curve;
}

TwoStageResult train_two_stage(Model& encoder, Model& symmetric, std::vector<Model>& decoders,
                               const ImageBatch& data, const TrainConfig& cfg) {
  TwoStageResult r;
  r.curve = train_stage1(encoder, symmetric, data, cfg);
  r.anchor_checksum = freeze_encoder(encoder);
  for (Model& d : decoders) {
    auto c = train_stage2_decoder(encoder, d, data, cfg, stage2_seed(cfg.seed, d));
    r.curve.insert(r.curve.end(), c.begin(), c.end());
  }
  if (encoder.checksum() != r.anchor_checksum) throw Error("anchor encoder changed during stage 2");
  return r;
}

LossCurve train_end_to_end(Model& encoder, Model& decoder, const ImageBatch& data, const TrainConfig& cfg,
                           std::size_t epochs) {
  cfg.validate();
  require_data(data);
  AdamState es(encoder, cfg), ds(decoder, cfg);
  LossCurve curve;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double loss =
        pair_epoch(encoder, decoder, es, ds, data, cfg, epoch_rng(cfg.seed, kPhaseEndToEnd, e), "end_to_end", e);
    emit(cfg, curve, {"end_to_end", e, decoder.label(), loss});
  }
  return curve;
}

IterativeResult train_iterative(Model& encoder, std::vector<Model>& decoders, const ImageBatch& data,
                                const TrainConfig& cfg) {
  cfg.validate();
  require_data(data);
  if (decoders.empty()) throw ConfigError("iterative training needs at least one decoder");
  AdamState es(encoder, cfg);
  std::vector<AdamState> ds;
  for (const Model& d : decoders) ds.emplace_back(d, cfg);
  IterativeResult r;
  const std::size_t n = decoders.size();
  for (std::size_t c = 0; c < cfg.iterative_cycles; ++c) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = c * n + k;
      const double loss = pair_epoch(encoder, decoders[k], es, ds[k], data, cfg,
                                     epoch_rng(cfg.seed, kPhaseEndToEnd, t), "iterative", t);
      emit(cfg, r.curve, {"iterative", t, decoders[k].label(), loss});
      r.snapshots.push_back({t, c, k, encoder, decoders[k]});
    }
  }
  return r;
}

SimultaneousGradients simultaneous_encoder_gradients(Model& encoder, std::vector<Model>& decoders,
                                                     const Tensor& images, double snr_db, ChannelKind kind,
                                                     std::uint64_t seed, bool noiseless) {
  if (decoders.empty()) throw ConfigError("simultaneous training needs at least one decoder");
  Rng rng(seed);
  std::vector<ChannelRealization> reals;
  const Shape latent{images.dim(0), encoder.arch.latent[0], encoder.arch.latent[1], encoder.arch.latent[2]};
  for (std::size_t k = 0; k < decoders.size(); ++k) reals.push_back(draw_realization(kind, snr_db, latent, rng, noiseless));

  SimultaneousGradients out;
  clear_grads(encoder);
  for (Model& d : decoders) clear_grads(d);
  {
    Tape tape;
    const auto losses =
        simultaneous_losses(tape, encoder, decoders, images, snr_db, reals, std::vector<bool>(decoders.size(), true));
    Var total = sum_losses(losses);
    tape.backward(total);
    out.joint = encoder_grad(encoder);
    out.total_loss = total.value().item();
    for (const Var& l : losses) out.path_losses.push_back(l.value().item());
  }
  for (std::size_t k = 0; k < decoders.size(); ++k) {
    clear_grads(encoder);
    for (Model& d : decoders) clear_grads(d);
    std::vector<bool> active(decoders.size(), false);
    active[k] = true;
    Tape tape;
    const auto losses = simultaneous_losses(tape, encoder, decoders, images, snr_db, reals, active);
    tape.backward(losses.front());
    out.per_path.push_back(encoder_grad(encoder));
  }
  clear_grads(encoder);
  for (Model& d : decoders) clear_grads(d);
  return out;
}

LossCurve train_simultaneous(Model& encoder, std::vector<Model>& decoders, const ImageBatch& data,
                             const TrainConfig& cfg) {
  cfg.validate();
  require_data(data);
  if (decoders.empty()) throw ConfigError("simultaneous training needs at least one decoder");
  for (const Model& d : decoders) {
    if (d.arch.latent != encoder.arch.latent) {
      throw ShapeError("decoder '" + d.label() + "' latent " + shape_str(d.arch.latent) +
                       " does not match encoder latent " + shape_str(encoder.arch.latent));
    }
  }
  AdamState es(encoder, cfg);
  std::vector<AdamState> ds;
  for (const Model& d : decoders) ds.emplace_back(d, cfg);
  const std::vector<bool> all(decoders.size(), true);
  LossCurve curve;
  for (std::size_t e = 0; e < cfg.simultaneous_epochs; ++e) {
    Rng rng = epoch_rng(cfg.seed, kPhaseSimultaneous, e);
    const auto batches = plan_epoch(data.size(), cfg, rng);
    std::vector<double> totals(decoders.size(), 0.0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor images = data.gather(batches[b].indices);
      const Shape latent{images.dim(0), encoder.arch.latent[0], encoder.arch.latent[1], encoder.arch.latent[2]};
      std::vector<ChannelRealization> reals;
      for (std::size_t k = 0; k < decoders.size(); ++k) {
        reals.push_back(draw_realization(cfg.channel, batches[b].snr_db, latent, rng, cfg.noiseless));
      }
      Tape tape;
      const auto losses = simultaneous_losses(tape, encoder, decoders, images, batches[b].snr_db, reals, all);
      Var total = sum_losses(losses);
      check_loss(total, "simultaneous", e, b, batches[b].snr_db);
      tape.backward(total);
      adam_step(encoder, es, cfg.lr);
      for (std::size_t k = 0; k < decoders.size(); ++k) {
        adam_step(decoders[k], ds[k], cfg.lr);
        totals[k] += losses[k].value().item() * static_cast<double>(batches[b].indices.size());
      }
    }
    for (std::size_t k = 0; k < decoders.size(); ++k) {
      emit(cfg, curve, {"simultaneous", e, decoders[k].label(), totals[k] / static_cast<double>(data.size())});
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------

std::vector<EvalPoint> evaluate(const Model& encoder, const Model& decoder, const ImageBatch& data,
                                const std::vector<double>& snrs, ChannelKind kind, std::uint64_t eval_seed,
                                std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("evaluation data is empty");
  if (encoder.arch.latent != decoder.arch.latent) {
    throw ShapeError("incompatible latent shapes: encoder " + shape_str(encoder.arch.latent) + ", decoder '" +
                     decoder.label() + "' " + shape_str(decoder.arch.latent));
  }
  if (batch_size == 0) batch_size = data.size();
  std::vector<EvalPoint> out;
  for (double snr : snrs) {
    std::uint64_t bits;
    std::memcpy(&bits, &snr, sizeof bits);
    const Rng base(mix_seed(eval_seed, bits));
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t b = 0; b < data.size(); b += batch_size) {
      const std::size_t e = std::min(data.size(), b + batch_size);
      const ImageBatch chunk = data.slice(b, e);
      Tape tape;
      Var x = tape.constant(chunk.images);
      Var s = power_normalize(forward(encoder, x, snr));
      // One stream per image keeps results independent of the evaluation batch size.
      ChannelRealization real;
      real.kind = kind;
      real.noise = Tensor(s.shape());
      const std::size_t lat = s.value().numel() / (e - b);
      Shape single = s.shape();
      single[0] = 1;
      for (std::size_t i = 0; i < e - b; ++i) {
        Rng img_rng = base.split(b + i);
        const auto one = draw_realization(kind, snr, single, img_rng);
        std::copy(one.noise.data().begin(), one.noise.data().end(), real.noise.data().begin() + i * lat);
        real.fading.insert(real.fading.end(), one.fading.begin(), one.fading.end());
      }
      const Tensor rec = forward(decoder, transmit(s, real), snr).value();
      const std::size_t per = rec.numel() / rec.dim(0);
      const Shape one{rec.dim(1), rec.dim(2), rec.dim(3)};
      for (std::size_t i = 0; i < e - b; ++i) {
        Tensor a(one, std::vector<double>(chunk.images.data().begin() + i * per,
                                          chunk.images.data().begin() + (i + 1) * per));
        Tensor r(one, std::vector<double>(rec.data().begin() + i * per, rec.data().begin() + (i + 1) * per));
        psnr_sum += psnr(a, r);
        ssim_sum += ms_ssim(a, r);
      }
    }
    const double n = static_cast<double>(data.size());
    out.push_back({snr, psnr_sum / n, ssim_sum / n});
  }
  return out;
}

double ForgettingEntry::mean_psnr() const {
  double s = 0.0;
  for (const auto& p : points) s += p.psnr_db;
  return points.empty() ? 0.0 : s / static_cast<double>(points.size());
}

double ForgettingEntry::mean_ms_ssim() const {
  double s = 0.0;
  for (const auto& p : points) s += p.ms_ssim;
  return points.empty() ? 0.0 : s / static_cast<double>(points.size());
}

const ForgettingEntry& ForgettingReport::at(std::size_t decoder_index, std::size_t offset) const {
  for (const auto& e : entries) {
    if (e.decoder_index == decoder_index && e.offset == offset) return e;
  }
  throw Error("forgetting report has no entry for decoder " + std::to_string(decoder_index) + " offset " +
              std::to_string(offset));
}

std::string forgetting_label(std::size_t offset) {
  return offset == 0 ? "Targeted" : "After-" + std::to_string(offset);
}

ForgettingReport forgetting_eval(const std::vector<Snapshot>& snapshots, std::size_t num_decoders,
                                 const ImageBatch& eval_data, const std::vector<double>& snrs, ChannelKind kind,
                                 std::uint64_t eval_seed) {
  if (num_decoders == 0) throw ConfigError("forgetting evaluation needs at least one decoder");
  const std::size_t max_offset = std::min<std::size_t>(3, num_decoders - 1);
  auto find = [&](std::size_t t) -> const Snapshot* {
    for (const auto& s : snapshots) {
      if (s.step == t) return &s;
    }
    return nullptr;
  };
  ForgettingReport report;
  for (std::size_t j = 0; j <= max_offset; ++j) report.labels.push_back(forgetting_label(j));
  for (std::size_t k = 0; k < num_decoders; ++k) {
    const Snapshot* target = nullptr;
    for (const auto& s : snapshots) {
      if (s.decoder_index != k || find(s.step + max_offset) == nullptr) continue;
      if (target == nullptr || s.step > target->step) target = &s;
    }
    if (target == nullptr) {
      throw Error("missing snapshot: decoder " + std::to_string(k) + " has no epoch followed by " +
                  std::to_string(max_offset) + " further snapshots");
    }
    report.decoders.push_back(target->decoder.label());
    for (std::size_t j = 0; j <= max_offset; ++j) {
      const Snapshot* enc = find(target->step + j);
      if (enc == nullptr) throw Error("missing snapshot at step " + std::to_string(target->step + j));
      ForgettingEntry entry;
      entry.decoder_index = k;
      entry.decoder = target->decoder.label();
      entry.label = forgetting_label(j);
      entry.offset = j;
      entry.snapshot = enc->step;
      entry.points = evaluate(enc->encoder, target->decoder, eval_data, snrs, kind, eval_seed);
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

}  // namespace djscc
