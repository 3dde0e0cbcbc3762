#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "djscc/error.hpp"
#include "djscc/image_io.hpp"
#include "djscc/layers.hpp"
#include "djscc/models.hpp"
#include "djscc/ops.hpp"
#include "djscc/training.hpp"

using namespace djscc;

namespace {

const Widths kSmall{8, 12};
const std::vector<DecoderVariant> kUsers{DecoderVariant::Attention, DecoderVariant::Conv, DecoderVariant::ResNet,
                                         DecoderVariant::VGG};

std::vector<LayerKind> kinds(const Model& m) {
  std::vector<LayerKind> out;
  for (const auto& l : m.arch.layers) out.push_back(l.kind);
  return out;
}

}  // namespace

TEST_CASE("encoder latent size follows the rate") {
  const Model enc = build_encoder({}, {1, 16}, {64, 128}, 1);
  CHECK(enc.arch.latent == Shape{3, 8, 8});
  CHECK(enc.latent_size() == 192);
  CHECK(enc.latent_size() * 16 == 3 * 32 * 32);

  CHECK(build_encoder({}, {1, 12}, kSmall, 1).arch.latent[0] == 4);
  for (std::size_t size : {16, 32, 48}) {
    for (const Rate r : {Rate{1, 16}, Rate{1, 12}, Rate{1, 6}, Rate{1, 48}}) {
      const Model e = build_encoder({3, size, size}, r, kSmall, 2);
      const Tensor z = encode(e, synth_dataset(2, size, 3).images, 5.0);
      CHECK(static_cast<double>(z.numel() / 2) / (3.0 * size * size) == doctest::Approx(r.value()).epsilon(1e-15));
    }
  }
  try {
    build_encoder({}, {1, 7}, kSmall, 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("1/16") != std::string::npos);
    CHECK(msg.find("1/12") != std::string::npos);
  }
  CHECK_THROWS_AS(build_encoder({3, 30, 32}, {1, 16}, kSmall, 1), ShapeError);
  CHECK(feasible_rates(3).size() == 48);
  CHECK(to_string(parse_rate("1/16")) == "1/16");
  CHECK(to_string(parse_rate("0.0625")) == "1/16");
  CHECK_THROWS_AS(parse_rate("abc"), ConfigError);
}

TEST_CASE("encoder parameter count matches hand-summed layer sizes") {
  const std::size_t w1 = 64, w2 = 128, c = 3, h = w2 / 2;
  const std::size_t expected = (c * w1 * 25 + w1) + (w1 + w1 * w1) + w1 +      // group 1
                               (w1 * w2 * 25 + w2) + (w2 + w2 * w2) + w2 +     // group 2
                               (h * (w2 + 1) + h) + h + (w2 * h + w2) +         // attention
                               (w2 * 3 * 9 + 3);                                // output conv
  CHECK(build_encoder({}, {1, 16}, {w1, w2}, 0).params.param_count() == expected);
}

TEST_CASE("symmetric decoder mirrors the encoder") {
  const Model enc = build_encoder({}, {1, 16}, kSmall, 1);
  const Model sym = build_symmetric_decoder(enc, 2);
  std::vector<LayerKind> expect;
  for (auto it = enc.arch.layers.rbegin(); it != enc.arch.layers.rend(); ++it) {
    LayerKind k = it->kind;
    if (k == LayerKind::Conv) k = LayerKind::TConv;
    if (k == LayerKind::Gdn) k = LayerKind::Igdn;
    expect.push_back(k);
  }
  expect.push_back(LayerKind::Sigmoid);
  CHECK(kinds(sym) == expect);
  CHECK(sym.checksum() != build_symmetric_decoder(enc, 3).checksum());

  for (std::size_t size : {16, 32, 40}) {
    const Model e = build_encoder({3, size, size}, {1, 16}, kSmall, 4);
    const Model d = build_symmetric_decoder(e, 5);
    const Tensor img = synth_dataset(2, size, 6).images;
    Tape tape;
    Var s = power_normalize(forward(e, tape.constant(img), 1.0));
    Rng noise_rng(1);
    const auto real = draw_realization(ChannelKind::Awgn, 1.0, s.shape(), noise_rng, true);
    const Tensor out = forward(d, transmit(s, real), 1.0).value();
    CHECK(out.shape() == img.shape());
    for (double v : out.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("user decoders") {
  const Model enc = build_encoder({}, {1, 16}, kSmall, 1);
  const Tensor z = encode(enc, synth_dataset(3, 32, 2).images, 7.0);
  std::set<std::size_t> counts{build_symmetric_decoder(enc, 0).params.param_count()};
  for (DecoderVariant v : kUsers) {
    const Model d = build_user_decoder(v, 1, enc.arch.latent, {}, kSmall, 3);
    const Tensor out = decode(d, z, 7.0);
    CHECK(out.shape() == Shape{3, 3, 32, 32});
    for (double p : out.data()) CHECK((p >= 0.0 && p <= 1.0));
    // Flat latents are accepted too.
    CHECK(decode(d, z.reshaped({3, 192}), 7.0).values() == out.values());
    CHECK_THROWS_AS(decode(d, Tensor({3, 191}), 7.0), ShapeError);
    counts.insert(d.params.param_count());

    const Model deeper = build_user_decoder(v, 2, enc.arch.latent, {}, kSmall, 3);
    CHECK(deeper.params.param_count() > d.params.param_count());
    CHECK(decode(deeper, z, 7.0).shape() == out.shape());
  }
  CHECK(counts.size() == 5);

  const Model res = build_user_decoder(DecoderVariant::ResNet, 1, enc.arch.latent, {}, kSmall, 3);
  std::size_t blocks = 0;
  for (const auto& l : res.arch.layers) blocks += l.kind == LayerKind::Residual;
  CHECK(blocks == 5);
  CHECK(res.arch.layers.back().after.back().kind == LayerKind::Sigmoid);
  for (std::size_t b = 0; b < 5; ++b) {
    bool fused = false;
    for (const auto& l : res.arch.layers[b].body) fused = fused || l.kind == LayerKind::SnrFuse;
    CHECK(fused == (b < 4));
  }

  const Model vgg = build_user_decoder(DecoderVariant::VGG, 1, enc.arch.latent, {}, kSmall, 3);
  CHECK(vgg.arch.layers.back().kind == LayerKind::Sigmoid);
  CHECK(vgg.arch.layers[vgg.arch.layers.size() - 2].kind == LayerKind::SnrFuse);
  std::size_t pools = 0;
  for (const auto& l : vgg.arch.layers) pools += l.kind == LayerKind::AvgPool;
  CHECK(pools == 2);

  CHECK_THROWS_AS(build_user_decoder(DecoderVariant::Conv, 1, {3, 7, 8}, {}, kSmall, 1), ShapeError);
  CHECK_THROWS_AS(build_user_decoder(DecoderVariant::Conv, 0, enc.arch.latent, {}, kSmall, 1), ConfigError);
  CHECK(parse_decoder_variant("ResNet") == DecoderVariant::ResNet);
  CHECK_THROWS_AS(parse_decoder_variant("unet"), ConfigError);
}

TEST_CASE("zeroed residual branch leaves the block as its activation") {
  Model res = build_user_decoder(DecoderVariant::ResNet, 1, {3, 8, 8}, {}, kSmall, 3);
  // Block 3 keeps w1 channels at 16x16 with an identity shortcut.
  const LayerSpec block = res.arch.layers[2];
  REQUIRE(block.shortcut.empty());
  for (auto& it : res.params.items()) {
    if (it.name.rfind(block.name + ".tconv", 0) == 0) {
      for (double& v : it.tensor.data()) v = 0.0;
    }
  }
  res.arch.layers = {block};
  res.arch.latent = {kSmall.hidden1, 16, 16};
  Tensor x({2, kSmall.hidden1, 16, 16});
  Rng rng(4);
  for (double& v : x.data()) v = rng.uniform(0.0, 2.0);
  CHECK(decode(res, x, 4.0).values() == x.values());
}

TEST_CASE("encode is deterministic and SNR-aware") {
  const Model enc = build_encoder({}, {1, 16}, kSmall, 7);
  const Tensor img = synth_dataset(2, 32, 8).images;
  CHECK(encode(enc, img, 4.0).values() == encode(enc, img, 4.0).values());
  CHECK(encode(enc, img, 1.0).values() != encode(enc, img, 13.0).values());
  CHECK_THROWS_AS(encode(enc, synth_dataset(1, 16, 1).images, 4.0), ShapeError);
  CHECK(build_encoder({}, {1, 16}, kSmall, 7).checksum() == enc.checksum());
}

TEST_CASE("encode + MSE is differentiable") {
  Model enc = build_encoder({3, 16, 16}, {1, 16}, {4, 6}, 9);
  const Tensor img = synth_dataset(1, 16, 10).images;
  Tensor target({1, 3, 4, 4});
  Rng rng(1);
  rng.fill_normal(target.data(), 0.5);
  std::vector<Tensor*> params;
  for (auto& it : enc.params.items()) params.push_back(&it.tensor);
  const double err = grad_check_params(
      [&](Tape& t) { return mse_loss(t.constant(target), forward(enc, t.constant(img), 6.0)); }, params, 1e-5, 6);
  CHECK(err < 1e-3);
}

TEST_CASE("frozen models") {
  Model enc = build_encoder({}, {1, 16}, kSmall, 1);
  AdamState state(enc, 0.9, 0.999, 1e-8);
  const auto before = enc.checksum();
  CHECK(freeze_encoder(enc) == before);
  CHECK(enc.frozen());
  CHECK_THROWS(adam_step(enc, state, 1e-3));
  CHECK(enc.checksum() == before);
  for (const auto& it : enc.params.items()) CHECK_FALSE(it.tensor.requires_grad());
  // A frozen model contributes constants only.
  Tape tape;
  Var out = forward(enc, tape.constant(synth_dataset(1, 32, 1).images), 4.0);
  tape.backward(sum(out));
  for (const auto& it : enc.params.items()) CHECK_FALSE(it.tensor.grad().has_value());
}

TEST_CASE("checkpoints round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "djscc_models_ckpt";
  const Model enc = build_encoder({}, {1, 12}, kSmall, 1);
  std::vector<Model> models{enc, build_symmetric_decoder(enc, 2)};
  for (DecoderVariant v : kUsers) models.push_back(build_user_decoder(v, 2, enc.arch.latent, {}, kSmall, 3));
  models[0].freeze();
  for (const Model& m : models) {
    const auto bytes = serialize_model(m, 42);
    CHECK(bytes == serialize_model(m, 42));
    const Model back = deserialize_model(bytes);
    CHECK(back.checksum() == m.checksum());
    CHECK(back.label() == m.label());
    CHECK(back.frozen() == m.frozen());
    CHECK(back.arch.latent == m.arch.latent);
    CHECK(kinds(back) == kinds(m));
    const auto path = dir / (m.label() + ".ckpt");
    save_checkpoint(m, path, 42);
    CHECK(load_checkpoint(path).checksum() == m.checksum());
  }
  auto bytes = serialize_model(models[2]);
  CHECK_THROWS_AS(deserialize_model(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100)), IoError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bytes), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
