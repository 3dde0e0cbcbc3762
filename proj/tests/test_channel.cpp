#include <cmath>

#include "doctest.h"
#include "djscc/channel.hpp"
#include "djscc/error.hpp"
#include "djscc/ops.hpp"

using namespace djscc;

namespace {

Tensor rnd(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data(), 1.0);
  return t;
}

double mean_power(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

TEST_CASE("power_normalize") {
  CHECK(power_normalize(Tensor::vec({1, 1, 1, 1})).values() == std::vector<double>{1, 1, 1, 1});
  CHECK(power_normalize(Tensor::vec({2, 0, 0, 0})).values() == std::vector<double>{2, 0, 0, 0});
  const Tensor p = power_normalize(Tensor::vec({3, 4}));
  CHECK(p[0] == doctest::Approx(3.0 * std::sqrt(2.0 / 25.0)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.1313708498984762).epsilon(1e-15));
  CHECK_THROWS(power_normalize(Tensor::zeros({4})));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = rnd({37}, seed);
    for (double& v : x.data()) v *= 1e-3 + static_cast<double>(seed);
    CHECK(std::abs(mean_power(power_normalize(x)) - 1.0) < 1e-9);
  }
}

TEST_CASE("taped power_normalize is row-wise") {
  Tape tape;
  Tensor x = rnd({3, 2, 2, 2}, 4);
  const Tensor y = power_normalize(tape.constant(x)).value();
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor row({8}, std::vector<double>(x.data().begin() + n * 8, x.data().begin() + (n + 1) * 8));
    const Tensor ref = power_normalize(row);
    for (std::size_t i = 0; i < 8; ++i) CHECK(y[n * 8 + i] == doctest::Approx(ref[i]).epsilon(1e-14));
  }
  x.set_requires_grad(true);
  CHECK(grad_check([](Tape&, Var v) { return sum(mul(power_normalize(v), v)); }, x) < 1e-6);
}

TEST_CASE("snr_to_sigma") {
  CHECK(snr_to_sigma(0.0) == 1.0);
  CHECK(snr_to_sigma(10.0) == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-15));
  CHECK(snr_to_sigma(10.0) == doctest::Approx(0.31623).epsilon(1e-5));
  CHECK(snr_to_sigma(13.0) == doctest::Approx(0.22387).epsilon(1e-5));
}

TEST_CASE("awgn_transmit") {
  const Tensor x = power_normalize(rnd({1000}, 1));
  Rng a(5), b(5);
  ChannelConfig hi{ChannelKind::Awgn, 200.0, 0};
  const Tensor y = awgn_transmit(x, hi, a);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-9);
  ChannelConfig cfg{ChannelKind::Awgn, 7.0, 0};
  Rng c(9), d(9);
  CHECK(awgn_transmit(x, cfg, c).values() == awgn_transmit(x, cfg, d).values());
}

TEST_CASE("awgn noise statistics at 1e6 samples") {
  const Tensor x = power_normalize(Tensor::full({1000000}, 1.0));
  for (double snr : {1.0, 4.0, 7.0, 10.0, 13.0}) {
    Rng rng(static_cast<std::uint64_t>(snr * 100));
    const Tensor y = awgn_transmit(x, {ChannelKind::Awgn, snr, 0}, rng);
    double var = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) var += (y[i] - x[i]) * (y[i] - x[i]);
    var /= static_cast<double>(x.numel());
    const double expected = std::pow(10.0, -snr / 10.0);
    INFO("snr " << snr);
    CHECK(std::abs(var / expected - 1.0) < 0.02);
    CHECK(std::abs(measure_empirical_snr(x, y) - snr) < 0.1);
  }
}

TEST_CASE("measure_empirical_snr") {
  const Tensor x = Tensor::vec({1, -1, 2, 0.5});
  CHECK(measure_empirical_snr(x, x) == kSnrCapDb);
  Tensor y = x;
  for (std::size_t i = 0; i < 4; ++i) y[i] += std::sqrt(10.0) * x[i];
  CHECK(measure_empirical_snr(x, y) == doctest::Approx(-10.0).epsilon(1e-12));
}

TEST_CASE("rayleigh_transmit") {
  Rng rng(3);
  CHECK(rayleigh_transmit(Tensor::vec({1, 2}), FadingDraw{1.0, 0.0}, 200.0, rng).values().size() == 2);
  const Tensor same = rayleigh_transmit(Tensor::vec({0.3, -0.7, 1.1, 0.2}), FadingDraw{1.0, 0.0}, 200.0, rng);
  CHECK(std::abs(same[0] - 0.3) < 1e-9);
  CHECK(std::abs(same[1] + 0.7) < 1e-9);
  const Tensor half = rayleigh_transmit(Tensor::vec({2, 4}), FadingDraw{0.5, 0.0}, 200.0, rng);
  CHECK(std::abs(half[0] - 1.0) < 1e-9);
  CHECK(std::abs(half[1] - 2.0) < 1e-9);
  CHECK_THROWS(rayleigh_transmit(Tensor::vec({1, 2, 3}), FadingDraw{}, 10.0, rng));

  Rng r1(8), r2(8);
  const auto o1 = rayleigh_transmit(Tensor::vec({1, 2}), {ChannelKind::Rayleigh, 5.0, 0}, r1);
  const auto o2 = rayleigh_transmit(Tensor::vec({1, 2}), {ChannelKind::Rayleigh, 5.0, 0}, r2);
  CHECK(o1.y.values() == o2.y.values());
  CHECK(o1.h.h_re == o2.h.h_re);
}

TEST_CASE("rayleigh fading power at 1e6 draws") {
  Rng rng(77);
  double s = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const FadingDraw h = draw_fading(rng);
    s += h.h_re * h.h_re + h.h_im * h.h_im;
  }
  CHECK(std::abs(s / 1e6 - 1.0) < 0.02);
}

TEST_CASE("equalize") {
  const Tensor x = Tensor::vec({0.3, -0.4, 1.5, 2.0});
  CHECK(equalize(x, FadingDraw{1.0, 0.0}).values() == x.values());
  // Multiplying by i rotates (a, b) to (-b, a).
  const Tensor rotated = Tensor::vec({0.4, 0.3, -2.0, 1.5});
  const Tensor back = equalize(rotated, FadingDraw{0.0, 1.0});
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-15);
  CHECK_THROWS_AS(equalize(x, FadingDraw{1e-7, 0.0}), DeepFadeError);

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor v = power_normalize(rnd({64}, seed + 1000));
    const FadingDraw h = draw_fading(rng);
    const Tensor y = rayleigh_transmit(v, h, kSnrCapDb * 10, rng);
    const Tensor e = equalize(y, h);
    double err = 0.0;
    for (std::size_t i = 0; i < v.numel(); ++i) err = std::max(err, std::abs(e[i] - v[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("taped channel realizations") {
  const Shape shape{4, 3, 2, 2};
  Rng a(11), b(11);
  const auto ra = draw_realization(ChannelKind::Rayleigh, 7.0, shape, a);
  const auto rb = draw_realization(ChannelKind::Rayleigh, 7.0, shape, b);
  CHECK(ra.noise.values() == rb.noise.values());
  CHECK(ra.fading.size() == 4);
  for (const auto& h : ra.fading) CHECK(h.magnitude() > kDeepFadeThreshold);
  const auto quiet = draw_realization(ChannelKind::Awgn, 7.0, shape, a, true);
  for (double v : quiet.noise.data()) CHECK(v == 0.0);

  Tensor x = rnd(shape, 12);
  x.set_requires_grad(true);
  // AWGN: the channel gradient is the identity.
  Tape t;
  Var xv = t.parameter(x);
  t.backward(sum(transmit(xv, draw_realization(ChannelKind::Awgn, 4.0, shape, a))));
  for (double g : *x.grad()) CHECK(g == 1.0);
  x.clear_grad();

  // Noiseless Rayleigh with equalization is the identity up to rounding.
  const auto clean = draw_realization(ChannelKind::Rayleigh, 4.0, shape, a, true);
  Tape t2;
  const Tensor y = transmit(t2.constant(x), clean).value();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-12);
  const auto noisy = draw_realization(ChannelKind::Rayleigh, 4.0, shape, a);
  CHECK(grad_check([&](Tape&, Var v) { return sum(square(transmit(v, noisy))); }, x) < 1e-6);
  CHECK(grad_check([&](Tape&, Var v) { return sum(mul(complex_scale(v, noisy.fading), v)); }, x) < 1e-6);

  CHECK(parse_channel_kind("rayleigh") == ChannelKind::Rayleigh);
  CHECK(to_string(ChannelKind::Awgn) == "awgn");
  CHECK_THROWS_AS(parse_channel_kind("rician"), ConfigError);
}
