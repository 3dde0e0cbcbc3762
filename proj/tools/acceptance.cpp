// Acceptance checks: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "djscc/error.hpp"
#include "djscc/experiment.hpp"
#include "djscc/layers.hpp"
#include "djscc/metrics.hpp"
#include "djscc/ops.hpp"

using namespace djscc;

namespace {

// Tolerances.
constexpr double kLayerGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr std::size_t kGradSeeds = 10;
constexpr double kNoiseVarTol = 0.02;
constexpr double kMeasuredSnrTol = 0.1;
constexpr double kFadePowerTol = 0.02;
constexpr double kRoundTripTol = 1e-12;
constexpr double kAdditivityTol = 1e-10;
constexpr double kSelfSsimTol = 1e-9;
constexpr double kForgetMarginDb = 0.3;
constexpr double kTieDb = 0.1;
constexpr double kTieMsSsim = 0.001;
constexpr double kMonotoneTolDb = 0.1;
constexpr std::size_t kSeedsRequired = 2;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// Desk-scale experiment profile.
ExperimentConfig desk_profile(Schedule schedule, std::uint64_t seed, const fs::path& dir) {
  ExperimentConfig cfg;
  cfg.train.schedule = schedule;
  cfg.train.seed = seed;
  cfg.train.batch_size = 8;
  cfg.train.epochs_stage1 = 20;
  cfg.train.epochs_per_decoder = 20;
  cfg.train.simultaneous_epochs = 20;
  cfg.train.iterative_cycles = 15;
  cfg.widths = {16, 32};
  cfg.train_count = 512;
  cfg.eval_count = 128;
  cfg.patch_size = 32;
  cfg.samples = 1;
  cfg.output_dir = dir.string();
  return cfg;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor rnd(Shape shape, std::uint64_t seed, double sd = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data(), sd);
  t.set_requires_grad(true);
  return t;
}

Tensor positive_rnd(Shape shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  t.set_requires_grad(true);
  return t;
}

std::vector<Tensor*> params_of(std::vector<Model*> models) {
  std::vector<Tensor*> out;
  for (Model* m : models)
    for (auto& it : m->params.items()) out.push_back(&it.tensor);
  return out;
}

struct PipelineCheck {
  double worst = 0.0;
  std::size_t probed = 0;
  std::size_t unstable = 0;
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// encode -> power normalize -> sigma = 0 channel -> decode -> MSE, against central
// differences on up to 3 coordinates per tensor. A coordinate whose difference
// quotient changes between eps = 1e-5 and 1e-6 by more than the tolerance is
// non-smooth inside the stencil (a PReLU kink) and is excluded, and counted.
PipelineCheck pipeline_grad_check(Model& enc, Model& dec, const Tensor& img, double snr) {
  auto loss = [&](Tape& t) {
    Var s = power_normalize(forward(enc, t.constant(img), snr));
    Rng quiet(0);
    Var y = transmit(s, draw_realization(ChannelKind::Awgn, snr, s.shape(), quiet, true));
    return mse_loss(t.constant(img), forward(dec, y, snr));
  };
  auto eval = [&] {
    Tape t;
    return loss(t).value().item();
  };
  std::vector<Tensor*> params = params_of({&enc, &dec});
  std::vector<std::vector<double>> analytic;
  {
    Tape t;
    t.backward(loss(t));
    for (Tensor* p : params) {
      analytic.push_back(p->grad() ? *p->grad() : std::vector<double>(p->numel(), 0.0));
      p->clear_grad();
    }
  }
  PipelineCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const std::size_t n = p.numel(), step = n <= 3 ? 1 : (n + 2) / 3;
    for (std::size_t i = 0; i < n; i += step) {
      const double orig = p[i];
      auto quotient = [&](double eps) {
        p[i] = orig + eps;
        const double up = eval();
        p[i] = orig - eps;
        const double down = eval();
        p[i] = orig;
        return (up - down) / (2.0 * eps);
      };
      ++out.probed;
      const double n1 = quotient(1e-5);
      const double e = rel_err(analytic[k][i], n1);
      if (e >= kModelGradTol && rel_err(n1, quotient(1e-6)) >= kModelGradTol) {
        ++out.unstable;
        continue;
      }
      out.worst = std::max(out.worst, e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  double worst_layer = 0.0, worst_model = 0.0;
  std::size_t unstable = 0, probed = 0;
  std::string worst_layer_name, worst_model_name;
  auto note = [](double e, const std::string& name, double& worst, std::string& worst_name) {
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };
  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    Tensor x = rnd({2, 3, 5, 5}, seed);
    for (double& v : x.data()) v += v >= 0 ? 0.05 : -0.05;
    Tensor x44 = rnd({2, 3, 4, 4}, seed + 1);
    Tensor k = rnd({4, 3, 3, 3}, seed + 2, 0.3);
    Tensor b4 = rnd({4}, seed + 3, 0.1);
    Tensor tk = rnd({3, 4, 3, 3}, seed + 4, 0.3);
    Tensor slope = rnd({3}, seed + 5, 0.3);
    Tensor beta = positive_rnd({3}, seed + 6, 0.5, 1.5);
    Tensor gamma = positive_rnd({3, 3}, seed + 7, 0.0, 0.5);
    Tensor raw = rnd({3}, seed + 8);
    Tensor dw = rnd({4, 6}, seed + 9, 0.3);
    Tensor fw = rnd({3, 4}, seed + 10, 0.5);
    Tensor fb = rnd({3}, seed + 11, 0.1);
    Tensor sw = rnd({1, 4}, seed + 12, 0.5);
    Tensor sb = rnd({1}, seed + 13, 0.1);
    Tensor ss = rnd({1}, seed + 14, 0.3);
    Tensor ew = rnd({3, 1}, seed + 15, 0.5);
    Tensor eb = rnd({3}, seed + 16, 0.1);
    Tensor d2 = rnd({2, 6}, seed + 17);
    Tensor lat = rnd({3, 4, 2, 2}, seed + 18);
    Rng crng(seed + 19);
    const auto fade = draw_realization(ChannelKind::Rayleigh, 4.0, lat.shape(), crng);

    const std::vector<std::pair<std::string, std::function<double()>>> layers{
        {"conv2d", [&] { return grad_check_params([&](Tape& t) { return reduce_mean(square(conv2d(t.parameter(x), t.parameter(k), t.parameter(b4), 2, 1))); }, {&x, &k, &b4}); }},
        {"tconv2d", [&] { return grad_check_params([&](Tape& t) { return reduce_mean(square(tconv2d(t.parameter(x44), t.parameter(tk), t.parameter(b4), 2, 1, 1))); }, {&x44, &tk, &b4}); }},
        {"prelu", [&] { return grad_check_params([&](Tape& t) { return sum(square(prelu(t.parameter(x), t.parameter(slope)))); }, {&x, &slope}); }},
        {"sigmoid", [&] { return grad_check_params([&](Tape& t) { return sum(square(sigmoid(t.parameter(x)))); }, {&x}); }},
        {"avg_pool", [&] { return grad_check_params([&](Tape& t) { return sum(square(avg_pool(t.parameter(x44), 2))); }, {&x44}); }},
        {"gdn", [&] { return grad_check_params([&](Tape& t) { return sum(square(gdn(t.parameter(x), t.parameter(beta), t.parameter(gamma)))); }, {&x, &beta, &gamma}); }},
        {"igdn", [&] { return grad_check_params([&](Tape& t) { return reduce_mean(square(igdn(t.parameter(x), t.parameter(beta), t.parameter(gamma)))); }, {&x, &beta, &gamma}); }},
        {"positive", [&] { return grad_check_params([&](Tape& t) { return sum(square(positive(t.parameter(raw)))); }, {&raw}); }},
        {"dense", [&] { return grad_check_params([&](Tape& t) { return sum(square(dense(t.parameter(d2), t.parameter(dw), t.parameter(b4)))); }, {&d2, &dw, &b4}); }},
        {"snr_fuse", [&] { return grad_check_params([&](Tape& t) { return sum(square(snr_fuse_dense(t.parameter(x), 7.0, {t.parameter(fw), t.parameter(fb)}))); }, {&x, &fw, &fb}); }},
        {"channel_attention", [&] { return grad_check_params([&](Tape& t) { return sum(square(channel_attention(t.parameter(x), 4.0, {{t.parameter(sw), t.parameter(sb)}, t.parameter(ss), {t.parameter(ew), t.parameter(eb)}}))); }, {&x, &sw, &sb, &ss, &ew, &eb}); }},
        {"power_normalize", [&] { return grad_check_params([&](Tape& t) { Var v = t.parameter(lat); return sum(mul(power_normalize(v), v)); }, {&lat}); }},
        {"rayleigh_channel", [&] { return grad_check_params([&](Tape& t) { return sum(square(transmit(t.parameter(lat), fade))); }, {&lat}); }},
    };
    for (const auto& [name, check] : layers) note(check(), name, worst_layer, worst_layer_name);

    Model enc = build_encoder({3, 16, 16}, {1, 16}, {4, 6}, mix_seed(seed, 1));
    std::vector<Model> decoders{build_symmetric_decoder(enc, mix_seed(seed, 2))};
    for (DecoderVariant v : {DecoderVariant::Attention, DecoderVariant::Conv, DecoderVariant::ResNet, DecoderVariant::VGG}) {
      decoders.push_back(build_user_decoder(v, 1, enc.arch.latent, enc.arch.image, {4, 6}, mix_seed(seed, 3)));
    }
    // Generic check point: biases off zero, GDN coupling away from its tiny init,
    // pixels inside (0, 1) so no activation sits exactly on a PReLU kink.
    Rng prng(mix_seed(seed, 5));
    auto jitter = [&](Model& m) {
      for (auto& it : m.params.items()) {
        const bool coupling = it.name.find("gamma_raw") != std::string::npos;
        for (double& v : it.tensor.data()) v = coupling ? prng.uniform(-3.0, -1.0) : v + 0.05 * prng.normal();
      }
    };
    jitter(enc);
    for (Model& d : decoders) jitter(d);
    Tensor img = synth_dataset(1, 16, mix_seed(seed, 4)).images;
    for (double& v : img.data()) v = 0.05 + 0.9 * v;
    const double snr = 1.0 + 3.0 * static_cast<double>(seed % 5);
    for (Model& dec : decoders) {
      const auto r = pipeline_grad_check(enc, dec, img, snr);
      unstable += r.unstable;
      probed += r.probed;
      note(r.worst, "encoder+" + dec.label(), worst_model, worst_model_name);
    }
  }
  return {worst_layer < kLayerGradTol && worst_model < kModelGradTol,
          "worst layer rel err " + fmt("%.2e", worst_layer) + " (" + worst_layer_name + ", tol 1e-4); worst model " +
              fmt("%.2e", worst_model) + " (" + worst_model_name + ", tol 1e-3) over " + std::to_string(probed) + " probed coordinates, " +
              std::to_string(unstable) + " excluded as non-smooth within the stencil; " + std::to_string(kGradSeeds) +
              " seeds"};
}

Outcome channel_statistics() {
  bool ok = true;
  double worst_var = 0.0, worst_snr = 0.0;
  const Tensor x = power_normalize(Tensor::full({1000000}, 1.0));
  for (double snr : {1.0, 4.0, 7.0, 10.0, 13.0}) {
    Rng rng(mix_seed(0xacce, static_cast<std::uint64_t>(snr)));
    const Tensor y = awgn_transmit(x, {ChannelKind::Awgn, snr, 0}, rng);
    double var = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) var += (y[i] - x[i]) * (y[i] - x[i]);
    var /= static_cast<double>(x.numel());
    const double rel = std::abs(var / std::pow(10.0, -snr / 10.0) - 1.0);
    const double dsnr = std::abs(measure_empirical_snr(x, y) - snr);
    worst_var = std::max(worst_var, rel);
    worst_snr = std::max(worst_snr, dsnr);
    ok = ok && rel < kNoiseVarTol && dsnr <= kMeasuredSnrTol;
  }
  Rng frng(0xfade);
  double power = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const FadingDraw h = draw_fading(frng);
    power += h.h_re * h.h_re + h.h_im * h.h_im;
  }
  power /= 1e6;
  ok = ok && std::abs(power - 1.0) < kFadePowerTol;
  double worst_rt = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor v({64});
    rng.fill_normal(v.data(), 1.0);
    v = power_normalize(v);
    const FadingDraw h = draw_fading(rng);
    const Tensor e = equalize(rayleigh_transmit(v, h, kSnrCapDb * 10, rng), h);
    for (std::size_t i = 0; i < v.numel(); ++i) worst_rt = std::max(worst_rt, std::abs(e[i] - v[i]));
  }
  ok = ok && worst_rt < kRoundTripTol;
  return {ok, "noise var rel err " + fmt("%.4f", worst_var) + " (tol 0.02); measured snr err " +
                  fmt("%.4f", worst_snr) + " dB (tol 0.1); E|h|^2 = " + fmt("%.4f", power) +
                  " (1 +- 0.02); equalized round trip " + fmt("%.1e", worst_rt) + " (tol 1e-12)"};
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params.items()[i].tensor.values() != b.params.items()[i].tensor.values()) return false;
  }
  return true;
}

Outcome framework_contracts() {
  const ImageShape image{3, 16, 16};
  const Widths w{4, 6};
  const auto data = synth_dataset(24, 16, 41);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs_stage1 = 2;
  cfg.epochs_per_decoder = 2;
  cfg.iterative_cycles = 3;
  cfg.lr = 2e-3;
  cfg.seed = 9;
  auto roster = [&](const Model& enc) {
    std::vector<Model> d;
    std::uint64_t i = 0;
    for (DecoderVariant v : {DecoderVariant::Attention, DecoderVariant::Conv, DecoderVariant::ResNet, DecoderVariant::VGG})
      d.push_back(build_user_decoder(v, 1, enc.arch.latent, image, w, 50 + i++));
    return d;
  };

  // (a) frozen anchor
  Model enc = build_encoder(image, {1, 16}, w, 1);
  Model sym = build_symmetric_decoder(enc, 2);
  train_stage1(enc, sym, data, cfg);
  const auto checksum = freeze_encoder(enc);
  auto forward_order = roster(enc);
  bool grads_absent = true;
  for (Model& d : forward_order) {
    train_stage2_decoder(enc, d, data, cfg, stage2_seed(cfg.seed, d));
    for (const auto& it : enc.params.items()) grads_absent = grads_absent && !it.tensor.grad().has_value();
  }
  {
    Tape tape;
    Var x = tape.constant(data.gather({0, 1}));
    const auto grads = tape.backward(
        mse_loss(x, forward(forward_order[0], power_normalize(forward(static_cast<const Model&>(enc), x, 4.0)), 4.0)));
    for (const auto& it : enc.params.items()) grads_absent = grads_absent && grads.count(&it.tensor) == 0;
    for (auto& it : forward_order[0].params.items()) it.tensor.clear_grad();
  }
  const bool a = grads_absent && enc.checksum() == checksum;

  // (b) order independence; forward_order was trained above with fresh copies below.
  auto reversed = roster(enc);
  std::reverse(reversed.begin(), reversed.end());
  for (Model& d : reversed) train_stage2_decoder(enc, d, data, cfg, stage2_seed(cfg.seed, d));
  std::reverse(reversed.begin(), reversed.end());
  bool b = true;
  for (std::size_t k = 0; k < reversed.size(); ++k) b = b && same_params(forward_order[k], reversed[k]);

  // (c) gradient additivity
  Model enc2 = build_encoder(image, {1, 16}, w, 3);
  auto decs = roster(enc2);
  double worst = 0.0;
  for (ChannelKind kind : {ChannelKind::Awgn, ChannelKind::Rayleigh}) {
    for (double snr : {1.0, 13.0}) {
      const auto g = simultaneous_encoder_gradients(enc2, decs, data.gather({0, 1, 2, 3}), snr, kind, 5);
      for (std::size_t i = 0; i < g.joint.size(); ++i) {
        double s = 0.0;
        for (const auto& p : g.per_path) s += p[i];
        worst = std::max(worst, std::abs(s - g.joint[i]));
      }
    }
  }
  const bool c = worst < kAdditivityTol;

  // (d) iterative with one decoder
  Model e1 = build_encoder(image, {1, 16}, w, 4), e2 = e1;
  std::vector<Model> d1{build_user_decoder(DecoderVariant::VGG, 1, e1.arch.latent, image, w, 6)};
  Model d2 = d1[0];
  const auto ri = train_iterative(e1, d1, data, cfg);
  const auto re = train_end_to_end(e2, d2, data, cfg, cfg.iterative_cycles);
  bool d = same_params(e1, e2) && same_params(d1[0], d2) && ri.curve.size() == re.size();
  for (std::size_t i = 0; d && i < re.size(); ++i) d = ri.curve[i].loss == re[i].loss;

  auto yn = [](bool v) { return v ? "ok" : "VIOLATED"; };
  return {a && b && c && d, std::string("(a) frozen anchor ") + yn(a) + "; (b) order independence " + yn(b) +
                                "; (c) max additivity err " + fmt("%.1e", worst) + " " + yn(c) +
                                "; (d) iterative == end-to-end " + yn(d)};
}

Outcome metric_identities() {
  bool exact = true, self = true, monotone = true;
  double worst_self = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor a = synth_dataset(1, 32, mix_seed(seed, 77)).images;
    Rng rng(seed);
    auto noisy = [&](double eps) {
      Tensor y = a;
      Rng r(seed);
      for (double& v : y.data()) v += eps * r.normal();
      return y;
    };
    const Tensor b = noisy(0.05);
    exact = exact && psnr(a, b) == 10.0 * std::log10(1.0 / mse_loss(b, a));
    const Tensor img({3, 32, 32}, a.values());
    const double s = ms_ssim(img, img);
    worst_self = std::max(worst_self, std::abs(s - 1.0));
    self = self && std::abs(s - 1.0) <= kSelfSsimTol;
    const Tensor n1({3, 32, 32}, noisy(0.01).values()), n2({3, 32, 32}, noisy(0.05).values()),
        n3({3, 32, 32}, noisy(0.1).values());
    monotone = monotone && ms_ssim(img, n1) > ms_ssim(img, n2) && ms_ssim(img, n2) > ms_ssim(img, n3);
  }
  return {exact && self && monotone, std::string("psnr == 10 log10(1/mse) ") + (exact ? "exact" : "MISMATCH") +
                                         "; |ms_ssim(x,x) - 1| <= " + fmt("%.1e", worst_self) +
                                         "; strictly decreasing under noise " + (monotone ? "yes" : "NO") +
                                         " (10 images)"};
}

// ---------------------------------------------------------------------------

struct Runs {
  fs::path root;
  std::map<std::pair<std::string, std::uint64_t>, fs::path> dirs;
  std::map<std::uint64_t, ForgettingReport> forgetting;
  std::map<std::pair<std::string, std::uint64_t>, std::vector<EvalRecord>> evals;
  std::map<std::string, double> seconds;
};

void timed(Runs& runs, const std::string& key, const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  runs.seconds[key] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void run_schedule(Runs& runs, Schedule s, std::uint64_t seed, std::ostream& log) {
  const std::string name = to_string(s);
  const fs::path dir = runs.root / (name + "_seed" + std::to_string(seed));
  fs::remove_all(dir);
  log << "  training " << name << " seed " << seed << std::endl;
  timed(runs, name, [&] {
    cmd_train(desk_profile(s, seed, dir));
    runs.evals[{name, seed}] = cmd_eval(dir);
    if (s == Schedule::Iterative) runs.forgetting[seed] = cmd_forgetting(dir);
  });
  runs.dirs[{name, seed}] = dir;
}

Outcome forgetting_direction(Runs& runs, std::ostream& log) {
  for (std::uint64_t seed : kSeeds) run_schedule(runs, Schedule::Iterative, seed, log);
  const ForgettingReport& first = runs.forgetting.begin()->second;
  std::ostringstream detail;
  bool ok = true;
  for (std::size_t k = 0; k < first.decoders.size(); ++k) {
    std::size_t wins = 0;
    detail << (k ? "; " : "") << first.decoders[k] << " margins";
    for (std::uint64_t seed : kSeeds) {
      const auto& rep = runs.forgetting[seed];
      const double margin = rep.at(k, 0).mean_psnr() - rep.at(k, rep.labels.size() - 1).mean_psnr();
      wins += margin >= kForgetMarginDb;
      detail << ' ' << fmt("%+.2f", margin);
    }
    detail << " (" << wins << "/3)";
    ok = ok && wins >= kSeedsRequired;
  }
  detail << "; Targeted - After-3 mean PSNR, need >= 0.30 dB in 2 of 3 seeds; " << fmt("%.0f", runs.seconds["iterative"])
         << " s";
  return {ok, detail.str()};
}

Outcome schedule_ordering(Runs& runs, std::ostream& log) {
  for (std::uint64_t seed : kSeeds) {
    run_schedule(runs, Schedule::TwoStage, seed, log);
    run_schedule(runs, Schedule::Simultaneous, seed, log);
    const fs::path out = runs.root / ("compare_seed" + std::to_string(seed));
    cmd_compare({runs.dirs[{"two_stage", seed}], runs.dirs[{"iterative", seed}], runs.dirs[{"simultaneous", seed}]},
                out);
  }
  std::size_t psnr_wins = 0, ssim_wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : kSeeds) {
    std::map<double, double> two_p, sim_p, two_s, sim_s;
    const auto& two = runs.evals[{"two_stage", seed}];
    const auto& sim = runs.evals[{"simultaneous", seed}];
    const double n = static_cast<double>(two.size()) / 5.0;
    for (const auto& r : two) {
      two_p[r.snr_db] += r.psnr_db / n;
      two_s[r.snr_db] += r.ms_ssim / n;
    }
    for (const auto& r : sim) {
      sim_p[r.snr_db] += r.psnr_db / n;
      sim_s[r.snr_db] += r.ms_ssim / n;
    }
    double min_dp = 1e9, min_ds = 1e9;
    for (const auto& [snr, v] : two_p) {
      min_dp = std::min(min_dp, v - sim_p[snr]);
      min_ds = std::min(min_ds, two_s[snr] - sim_s[snr]);
    }
    psnr_wins += min_dp >= -kTieDb;
    ssim_wins += min_ds >= -kTieMsSsim;
    detail << (seed == kSeeds.front() ? "" : "; ") << "seed " << seed << " min(two_stage - simultaneous) "
           << fmt("%+.3f", min_dp) << " dB, " << fmt("%+.4f", min_ds) << " ms-ssim";
  }
  detail << "; psnr " << psnr_wins << "/3, ms-ssim " << ssim_wins << "/3 (ties 0.1 dB / 0.001); "
         << fmt("%.0f", runs.seconds["iterative"] + runs.seconds["two_stage"] + runs.seconds["simultaneous"])
         << " s for all three schedules";
  return {psnr_wins >= kSeedsRequired && ssim_wins >= kSeedsRequired, detail.str()};
}

Outcome snr_monotonicity(const Runs& runs) {
  std::size_t pairs = 0, bad = 0;
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& [key, rows] : runs.evals) {
    std::map<std::string, std::vector<const EvalRecord*>> by_dec;
    for (const auto& r : rows) by_dec[r.decoder].push_back(&r);
    for (auto& [dec, pts] : by_dec) {
      ++pairs;
      std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->snr_db < b->snr_db; });
      double drop = 0.0;
      for (std::size_t i = 1; i < pts.size(); ++i) drop = std::max(drop, pts[i - 1]->psnr_db - pts[i]->psnr_db);
      if (drop > kMonotoneTolDb) ++bad;
      if (drop > worst) {
        worst = drop;
        worst_name = key.first + "/" + dec + "/seed" + std::to_string(key.second);
      }
    }
  }
  return {pairs > 0 && bad == 0, std::to_string(pairs - bad) + "/" + std::to_string(pairs) +
                                     " (schedule, decoder, seed) curves non-decreasing; largest drop " +
                                     fmt("%.3f", worst) + " dB at " + worst_name + " (tol 0.1)"};
}

Outcome determinism(const Runs& runs, std::ostream& log) {
  std::size_t files = 0, mismatched = 0;
  std::string first_bad;
  const std::uint64_t seed = kSeeds.front();
  std::vector<fs::path> originals, reruns;
  for (const std::string s : {"two_stage", "iterative", "simultaneous"}) {
    // The original moves aside and the manifest is rerun unmodified, so it writes back into place.
    const fs::path again = runs.dirs.at({s, seed});
    const fs::path dir = runs.root / (s + "_seed" + std::to_string(seed) + "_original");
    fs::remove_all(dir);
    fs::rename(again, dir);
    log << "  rerunning " << s << " seed " << seed << " from its manifest" << std::endl;
    const ExperimentConfig cfg = load_config(dir / "manifest.txt");
    if (resolve_output_dir(cfg.output_dir) != again) throw IoError("manifest output dir moved: " + cfg.output_dir);
    cmd_train(cfg);
    cmd_eval(again);
    std::vector<std::string> extra{"eval.csv"};
    if (cfg.train.schedule == Schedule::Iterative) {
      cmd_forgetting(again);
      extra.push_back("forgetting.csv");
    }
    std::vector<std::string> names;
    for (const auto& m : read_manifest(dir)) names.push_back(m.file);
    names.insert(names.end(), extra.begin(), extra.end());
    names.push_back("manifest.txt");
    for (const auto& n : names) {
      ++files;
      if (read_file(dir / n) != read_file(again / n)) {
        ++mismatched;
        if (first_bad.empty()) first_bad = (dir / n).string();
      }
    }
    originals.push_back(dir);
    reruns.push_back(again);
  }
  const fs::path c1 = runs.root / "det_compare_a", c2 = runs.root / "det_compare_b";
  cmd_compare(originals, c1);
  cmd_compare(reruns, c2);
  for (const char* n : {"compare_psnr.csv", "compare_ms_ssim.csv"}) {
    ++files;
    if (read_file(c1 / n) != read_file(c2 / n)) {
      ++mismatched;
      if (first_bad.empty()) first_bad = n;
    }
  }
  return {mismatched == 0, std::to_string(files - mismatched) + "/" + std::to_string(files) +
                               " files byte-identical after rerunning the seed-" + std::to_string(seed) +
                               " runs of all three schedules from their manifests" +
                               (first_bad.empty() ? "" : "; first mismatch " + first_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("-o,--out", out, "Directory for experiment runs");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  Runs runs;
  runs.root = fs::absolute(resolve_output_dir(out));
  fs::create_directories(runs.root);
  std::ostream& log = std::cerr;

  const std::vector<std::string> names{"",
                                       "gradient oracle suite",
                                       "channel statistics",
                                       "framework contracts",
                                       "metric identities",
                                       "desk-scale forgetting",
                                       "desk-scale schedule ordering",
                                       "snr monotonicity",
                                       "determinism"};
  // Later criteria reuse the runs of earlier ones.
  std::set<int> todo;
  for (int c = 1; c <= 8; ++c)
    if (wanted(c)) todo.insert(c);
  if (todo.count(6) || todo.count(7) || todo.count(8)) todo.insert(5);
  if (todo.count(7) || todo.count(8)) todo.insert(6);

  int failures = 0;
  for (int c : todo) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      switch (c) {
        case 1: o = gradient_suite(); break;
        case 2: o = channel_statistics(); break;
        case 3: o = framework_contracts(); break;
        case 4: o = metric_identities(); break;
        case 5: o = forgetting_direction(runs, log); break;
        case 6: o = schedule_ordering(runs, log); break;
        case 7: o = snr_monotonicity(runs); break;
        case 8: o = determinism(runs, log); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << "criterion " << c << " (" << names[c] << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
