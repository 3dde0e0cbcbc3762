#include <cmath>

#include "doctest.h"
#include "djscc/error.hpp"
#include "djscc/metrics.hpp"
#include "djscc/ops.hpp"
#include "djscc/training.hpp"

using namespace djscc;

namespace {

const Widths kTiny{4, 6};
const ImageShape kImage{3, 16, 16};
const std::vector<DecoderVariant> kUsers{DecoderVariant::Attention, DecoderVariant::Conv, DecoderVariant::ResNet,
                                         DecoderVariant::VGG};

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs_stage1 = 2;
  cfg.epochs_per_decoder = 2;
  cfg.iterative_cycles = 2;
  cfg.simultaneous_epochs = 2;
  cfg.lr = 2e-3;
  cfg.seed = 5;
  return cfg;
}

std::vector<Model> roster(const Model& enc, std::uint64_t seed) {
  std::vector<Model> out;
  for (std::size_t i = 0; i < kUsers.size(); ++i) {
    out.push_back(build_user_decoder(kUsers[i], 1, enc.arch.latent, kImage, kTiny, seed + i));
  }
  return out;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params.items()[i].tensor.values() != b.params.items()[i].tensor.values()) return false;
  }
  return true;
}

double mean_psnr(const Model& enc, const Model& dec, const ImageBatch& data) {
  double s = 0.0;
  const auto pts = evaluate(enc, dec, data, {1, 7, 13}, ChannelKind::Awgn, 3);
  for (const auto& p : pts) s += p.psnr_db;
  return s / static_cast<double>(pts.size());
}

}  // namespace

TEST_CASE("train config validation lists every problem") {
  TrainConfig cfg;
  CHECK(cfg.problems().empty());
  CHECK(cfg.lr == 5e-4);
  CHECK(cfg.batch_size == 40);
  CHECK(cfg.snr_set_db == std::vector<double>{1, 4, 7, 10, 13});
  CHECK(to_string(cfg.rate) == "1/16");
  cfg.lr = -1.0;
  cfg.batch_size = 0;
  cfg.snr_set_db.clear();
  CHECK(cfg.problems().size() == 3);
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("batch_size") != std::string::npos);
    CHECK(msg.find("snr_set") != std::string::npos);
  }
  CHECK(parse_schedule("iterative") == Schedule::Iterative);
  CHECK_THROWS_AS(parse_schedule("greedy"), ConfigError);
}

TEST_CASE("mse_loss") {
  CHECK(mse_loss(Tensor::vec({1, 0}), Tensor::vec({1, 0})) == 0.0);
  CHECK(mse_loss(Tensor::vec({1, 0}), Tensor::vec({0, 0})) == 0.5);
  Tape tape;
  CHECK(mse_loss(tape.constant(Tensor::vec({1, 0})), tape.constant(Tensor::vec({0, 0}))).value().item() == 0.5);
  CHECK_THROWS_AS(mse_loss(Tensor::vec({1, 0}), Tensor::vec({0, 0, 0})), ShapeError);
  const Tensor a = Tensor::vec({0.2, 0.5, 0.9}), b = Tensor::vec({0.1, 0.5, 0.7});
  CHECK(psnr(a, b) == 10.0 * std::log10(1.0 / mse_loss(a, b)));
}

TEST_CASE("adam_step") {
  Model m = build_encoder(kImage, {1, 16}, kTiny, 1);
  const Model before = m;
  AdamState state(m, 0.9, 0.999, 1e-8);
  adam_step(m, state, 1e-3);
  CHECK(same_params(m, before));
  CHECK(state.step == 1);

  // First step on gradient g: m_hat = g, v_hat = g^2, so the update is -lr g / (|g| + eps).
  Model a = before, b = before;
  AdamState sa(a, 0.9, 0.999, 1e-8), sb(b, 0.9, 0.999, 1e-8);
  Rng rng(2);
  for (auto* model : {&a, &b}) {
    Rng r(2);
    for (auto& it : model->params.items()) {
      std::vector<double> g(it.tensor.numel());
      for (double& v : g) v = r.normal() * 1e-2;
      it.tensor.accumulate_grad(g);
    }
  }
  std::vector<std::vector<double>> grads;
  for (const auto& it : a.params.items()) grads.push_back(*it.tensor.grad());
  adam_step(a, sa, 1e-3);
  adam_step(b, sb, 1e-3);
  CHECK(same_params(a, b));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    const auto& t = a.params.items()[p].tensor;
    const auto& t0 = before.params.items()[p].tensor;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double g = grads[p][i];
      const double expect = t0[i] - 1e-3 * g / (std::abs(g) + 1e-8);
      CHECK(std::abs(t[i] - expect) < 1e-15);
    }
    CHECK_FALSE(t.grad().has_value());
  }

  Tensor& w = a.params.items()[0].tensor;
  w.accumulate_grad(std::vector<double>(w.numel(), std::nan("")));
  CHECK_THROWS_AS(adam_step(a, sa, 1e-3), NumericError);
}

TEST_CASE("stage 1 with lr 0 leaves parameters unchanged") {
  const auto data = synth_dataset(16, 16, 1);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  const Model e0 = enc, s0 = sym;
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  cfg.epochs_stage1 = 1;
  const auto curve = train_stage1(enc, sym, data, cfg);
  CHECK(curve.size() == 1);
  CHECK(same_params(enc, e0));
  CHECK(same_params(sym, s0));
}

TEST_CASE("stage 1 loss decreases on a toy set") {
  const auto data = synth_dataset(64, 16, 2);
  Model enc = build_encoder(kImage, {1, 16}, {8, 12}, 3);
  Model sym = build_symmetric_decoder(enc, 4);
  TrainConfig cfg = tiny_config();
  cfg.epochs_stage1 = 10;
  const auto curve = train_stage1(enc, sym, data, cfg);
  REQUIRE(curve.size() == 10);
  // Smoothed with a 3-point running mean; at most one regression, of at most 5%.
  std::vector<double> smooth;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1, hi = std::min(curve.size() - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += curve[j].loss;
    smooth.push_back(s / static_cast<double>(hi - lo + 1));
  }
  int regressions = 0;
  for (std::size_t i = 1; i < smooth.size(); ++i) {
    if (smooth[i] > smooth[i - 1]) {
      ++regressions;
      CHECK(smooth[i] <= 1.05 * smooth[i - 1]);
    }
  }
  CHECK(regressions <= 1);
  CHECK(curve.back().loss < curve.front().loss);
}

TEST_CASE("noiseless stage 1 memorizes a single batch") {
  const auto data = synth_dataset(4, 32, 3);
  Model enc = build_encoder({}, {1, 16}, {8, 16}, 5);
  Model sym = build_symmetric_decoder(enc, 6);
  TrainConfig cfg;
  cfg.noiseless = true;
  cfg.batch_size = 4;
  cfg.epochs_stage1 = 2000;
  const auto curve = train_stage1(enc, sym, data, cfg);
  CHECK(curve.back().loss < 0.01);
  // Reconstruction of the training patches through a sigma = 0 channel.
  Tape tape;
  Var s = power_normalize(forward(enc, tape.constant(data.images), 7.0));
  Rng rng(0);
  const Tensor rec = forward(sym, transmit(s, draw_realization(ChannelKind::Awgn, 7.0, s.shape(), rng, true)), 7.0).value();
  CHECK(psnr(data.images, rec) > 25.0);
}

TEST_CASE("stage 2 keeps the anchor untouched") {
  const auto data = synth_dataset(24, 16, 4);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  TrainConfig cfg = tiny_config();
  train_stage1(enc, sym, data, cfg);
  auto decoders = roster(enc, 10);
  CHECK_THROWS(train_stage2_decoder(enc, decoders[0], data, cfg, 1));

  const auto checksum = freeze_encoder(enc);
  const Tensor probe = data.gather({0, 1});
  const Tensor z0 = encode(enc, probe, 4.0);
  for (Model& d : decoders) train_stage2_decoder(enc, d, data, cfg, stage2_seed(cfg.seed, d));
  CHECK(enc.checksum() == checksum);
  CHECK(encode(enc, probe, 4.0).values() == z0.values());
  for (const auto& it : enc.params.items()) CHECK_FALSE(it.tensor.grad().has_value());

  // A gradient pass through the anchor reaches no encoder tensor.
  Tape tape;
  Var x = tape.constant(probe);
  Var loss = mse_loss(x, forward(decoders[0], power_normalize(forward(static_cast<const Model&>(enc), x, 4.0)), 4.0));
  const auto grads = tape.backward(loss);
  double enc_sum = 0.0;
  for (const auto& it : enc.params.items()) {
    CHECK(grads.count(&it.tensor) == 0);
    if (it.tensor.grad()) {
      for (double g : *it.tensor.grad()) enc_sum += std::abs(g);
    }
  }
  CHECK(enc_sum == 0.0);
  for (auto& d : decoders)
    for (auto& it : d.params.items()) it.tensor.clear_grad();

  Model other = build_user_decoder(DecoderVariant::Conv, 1, {4, 4, 4}, kImage, kTiny, 1);
  CHECK_THROWS_AS(train_stage2_decoder(enc, other, data, cfg, 1), ShapeError);
}

TEST_CASE("stage 2 results do not depend on training order") {
  const auto data = synth_dataset(24, 16, 5);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  TrainConfig cfg = tiny_config();
  auto forward_order = roster(enc, 20);
  auto reversed = roster(enc, 20);
  train_two_stage(enc, sym, forward_order, data, cfg);
  std::reverse(reversed.begin(), reversed.end());
  for (Model& d : reversed) train_stage2_decoder(enc, d, data, cfg, stage2_seed(cfg.seed, d));
  std::reverse(reversed.begin(), reversed.end());
  for (std::size_t k = 0; k < forward_order.size(); ++k) {
    CHECK(forward_order[k].checksum() == reversed[k].checksum());
    CHECK(same_params(forward_order[k], reversed[k]));
  }
}

TEST_CASE("stage 2 improves every decoder from its initialization") {
  const auto data = synth_dataset(64, 16, 6);
  const auto eval = synth_dataset(16, 16, 7);
  Model enc = build_encoder(kImage, {1, 16}, {8, 12}, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  TrainConfig cfg = tiny_config();
  cfg.epochs_stage1 = 6;
  cfg.epochs_per_decoder = 6;
  train_stage1(enc, sym, data, cfg);
  freeze_encoder(enc);
  for (DecoderVariant v : kUsers) {
    Model d = build_user_decoder(v, 1, enc.arch.latent, kImage, {8, 12}, 30);
    const double before = mean_psnr(enc, d, eval);
    train_stage2_decoder(enc, d, data, cfg, stage2_seed(cfg.seed, d));
    INFO(d.label());
    CHECK(mean_psnr(enc, d, eval) >= before + 1.0);
  }
}

TEST_CASE("iterative training") {
  const auto data = synth_dataset(16, 16, 8);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  auto decoders = roster(enc, 40);
  TrainConfig cfg = tiny_config();
  cfg.iterative_cycles = 3;
  const auto r = train_iterative(enc, decoders, data, cfg);
  CHECK(r.snapshots.size() == 3 * decoders.size());
  CHECK(r.curve.size() == 3 * decoders.size());
  for (std::size_t t = 0; t < r.snapshots.size(); ++t) {
    CHECK(r.snapshots[t].step == t);
    CHECK(r.snapshots[t].decoder_index == t % 4);
    CHECK(r.snapshots[t].cycle == t / 4);
    if (t > 0) CHECK(r.snapshots[t].encoder.checksum() != r.snapshots[t - 1].encoder.checksum());
  }
  CHECK(r.snapshots.back().encoder.checksum() == enc.checksum());
  CHECK(r.snapshots.back().decoder.checksum() == decoders.back().checksum());
}

TEST_CASE("iterative with one decoder is end-to-end training") {
  const auto data = synth_dataset(16, 16, 9);
  TrainConfig cfg = tiny_config();
  cfg.iterative_cycles = 3;
  Model e1 = build_encoder(kImage, {1, 16}, kTiny, 1), e2 = e1;
  std::vector<Model> d1{build_user_decoder(DecoderVariant::Conv, 1, e1.arch.latent, kImage, kTiny, 2)};
  Model d2 = d1[0];
  const auto ri = train_iterative(e1, d1, data, cfg);
  const auto re = train_end_to_end(e2, d2, data, cfg, 3);
  CHECK(same_params(e1, e2));
  CHECK(same_params(d1[0], d2));
  for (std::size_t i = 0; i < 3; ++i) CHECK(ri.curve[i].loss == re[i].loss);
}

TEST_CASE("simultaneous gradients decompose over decoder paths") {
  const auto data = synth_dataset(6, 16, 10);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  auto decoders = roster(enc, 50);
  for (ChannelKind kind : {ChannelKind::Awgn, ChannelKind::Rayleigh}) {
    const auto g = simultaneous_encoder_gradients(enc, decoders, data.images, 4.0, kind, 77);
    REQUIRE(g.per_path.size() == 4);
    double total = 0.0;
    for (double l : g.path_losses) total += l;
    CHECK(std::abs(total - g.total_loss) < 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.joint.size(); ++i) {
      double s = 0.0;
      for (const auto& p : g.per_path) s += p[i];
      worst = std::max(worst, std::abs(s - g.joint[i]));
    }
    CHECK(worst < 1e-10);
  }

  // Identical decoders with a shared noiseless channel: joint = D x single path.
  std::vector<Model> clones(3, decoders[1]);
  const auto g = simultaneous_encoder_gradients(enc, clones, data.images, 4.0, ChannelKind::Awgn, 1, true);
  for (std::size_t i = 0; i < g.joint.size(); ++i) {
    CHECK(std::abs(g.joint[i] - 3.0 * g.per_path[0][i]) <= 1e-12 * std::max(1.0, std::abs(g.joint[i])));
  }
  for (const auto& it : enc.params.items()) CHECK_FALSE(it.tensor.grad().has_value());
}

TEST_CASE("simultaneous training improves all decoders") {
  const auto data = synth_dataset(48, 16, 11);
  const auto eval = synth_dataset(16, 16, 12);
  Model enc = build_encoder(kImage, {1, 16}, {8, 12}, 1);
  auto decoders = roster(enc, 60);
  std::vector<double> before;
  for (const Model& d : decoders) before.push_back(mean_psnr(enc, d, eval));
  TrainConfig cfg = tiny_config();
  cfg.simultaneous_epochs = 4;
  const auto curve = train_simultaneous(enc, decoders, data, cfg);
  CHECK(curve.size() == 4 * decoders.size());
  for (std::size_t k = 0; k < decoders.size(); ++k) {
    INFO(decoders[k].label());
    CHECK(mean_psnr(enc, decoders[k], eval) > before[k]);
  }
}

TEST_CASE("non-finite loss aborts before any update") {
  auto data = synth_dataset(8, 16, 13);
  data.images[5] = std::nan("");
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  const Model e0 = enc;
  TrainConfig cfg = tiny_config();
  cfg.batch_size = 8;
  CHECK_THROWS_AS(train_stage1(enc, sym, data, cfg), NumericError);
  CHECK(same_params(enc, e0));
}

TEST_CASE("evaluate and forgetting protocol") {
  const auto data = synth_dataset(16, 16, 14);
  const auto eval = synth_dataset(8, 16, 15);
  Model enc = build_encoder(kImage, {1, 16}, kTiny, 1);
  auto decoders = roster(enc, 70);

  const auto a = evaluate(enc, decoders[0], eval, {1, 13}, ChannelKind::Rayleigh, 9);
  const auto b = evaluate(enc, decoders[0], eval, {1, 13}, ChannelKind::Rayleigh, 9, 3);
  REQUIRE(a.size() == 2);
  CHECK(a[0].snr_db == 1.0);
  CHECK(a[0].psnr_db == b[0].psnr_db);
  CHECK(a[1].ms_ssim == b[1].ms_ssim);
  for (const auto& p : a) {
    CHECK(std::isfinite(p.psnr_db));
    CHECK((p.ms_ssim >= 0.0 && p.ms_ssim <= 1.0));
  }
  Model bad = build_user_decoder(DecoderVariant::Conv, 1, {4, 4, 4}, kImage, kTiny, 1);
  CHECK_THROWS_AS(evaluate(enc, bad, eval, {1}, ChannelKind::Awgn, 0), ShapeError);

  TrainConfig cfg = tiny_config();
  cfg.iterative_cycles = 1;
  auto r1 = train_iterative(enc, decoders, data, cfg);
  CHECK_THROWS(forgetting_eval(r1.snapshots, 4, eval, {1, 13}, ChannelKind::Awgn, 0));

  Model enc2 = build_encoder(kImage, {1, 16}, kTiny, 1);
  auto decoders2 = roster(enc2, 70);
  cfg.iterative_cycles = 2;
  auto r2 = train_iterative(enc2, decoders2, data, cfg);
  const auto rep = forgetting_eval(r2.snapshots, 4, eval, {1, 13}, ChannelKind::Awgn, 0);
  CHECK(rep.entries.size() == 16);
  CHECK(rep.labels == std::vector<std::string>{"Targeted", "After-1", "After-2", "After-3"});
  for (std::size_t k = 0; k < 4; ++k) {
    // Latest own epoch with three later snapshots: t = 4 for k = 0, t = k otherwise.
    const std::size_t t = k == 0 ? 4 : k;
    CHECK(rep.at(k, 0).snapshot == t);
    CHECK(rep.at(k, 0).label == "Targeted");
    CHECK(rep.at(k, 3).snapshot == t + 3);
    const auto own = evaluate(r2.snapshots[t].encoder, r2.snapshots[t].decoder, eval, {1, 13}, ChannelKind::Awgn, 0);
    CHECK(rep.at(k, 0).points[1].psnr_db == own[1].psnr_db);
  }
  CHECK(rep.decoders[2] == "resnet");
}
