#include "djscc/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "djscc/error.hpp"
#include "djscc/layers.hpp"
#include "djscc/ops.hpp"
#include "djscc/rng.hpp"

namespace djscc {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::TConv: return "tconv";
    case LayerKind::Gdn: return "gdn";
    case LayerKind::Igdn: return "igdn";
    case LayerKind::Prelu: return "prelu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Attention: return "attention";
    case LayerKind::SnrFuse: return "snrfuse";
    case LayerKind::Residual: return "residual";
  }
  return "?";
}

std::string to_string(ModelRole role) {
  switch (role) {
    case ModelRole::Encoder: return "encoder";
    case ModelRole::SymmetricDecoder: return "symmetric";
    case ModelRole::UserDecoder: return "decoder";
  }
  return "?";
}

std::string to_string(DecoderVariant variant) {
  switch (variant) {
    case DecoderVariant::Attention: return "attention";
    case DecoderVariant::Conv: return "conv";
    case DecoderVariant::ResNet: return "resnet";
    case DecoderVariant::VGG: return "vgg";
    case DecoderVariant::SymmetricMirror: return "symmetric";
  }
  return "?";
}

DecoderVariant parse_decoder_variant(const std::string& text) {
  std::string t;
  for (char c : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "attention") return DecoderVariant::Attention;
  if (t == "conv") return DecoderVariant::Conv;
  if (t == "resnet") return DecoderVariant::ResNet;
  if (t == "vgg") return DecoderVariant::VGG;
  if (t == "symmetric" || t == "symmetricmirror") return DecoderVariant::SymmetricMirror;
  throw ConfigError("unknown decoder variant '" + text + "' (expected attention, conv, resnet, vgg or symmetric)");
}

Rate parse_rate(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) {
      const double v = std::stod(text);
      if (v <= 0.0) throw ConfigError("rate must be positive");
      const std::size_t den = static_cast<std::size_t>(std::llround(1.0 / v));
      if (std::abs(1.0 / static_cast<double>(den) - v) > 1e-12) {
        throw ConfigError("rate '" + text + "' must be written as a fraction like 1/16");
      }
      return {1, den};
    }
    const long num = std::stol(text.substr(0, slash));
    const long den = std::stol(text.substr(slash + 1));
    if (num <= 0 || den <= 0) throw ConfigError("rate '" + text + "' must be a positive fraction");
    return {static_cast<std::size_t>(num), static_cast<std::size_t>(den)};
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse rate '" + text + "'");
  }
}

std::string to_string(const Rate& r) { return std::to_string(r.num) + "/" + std::to_string(r.den); }

// ---------------------------------------------------------------------------

Tensor& ModelParams::add(std::string name, Tensor t) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  t.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(t)});
  return items_.back().tensor;
}

Tensor& ModelParams::at(const std::string& name) {
  for (auto& it : items_) {
    if (it.name == name) return it.tensor;
  }
  throw Error("no parameter named " + name);
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return it.tensor;
  }
  throw Error("no parameter named " + name);
}

bool ModelParams::contains(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return true;
  }
  return false;
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.tensor.numel();
  return n;
}

void Model::freeze() {
  frozen_ = true;
  for (auto& it : params.items()) {
    it.tensor.set_requires_grad(false);
    it.tensor.clear_grad();
  }
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

}  // namespace

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t Model::checksum() const {
  std::vector<std::uint8_t> bytes;
  for (const auto& it : params.items()) {
    bytes.insert(bytes.end(), it.name.begin(), it.name.end());
    for (double v : it.tensor.data()) put_f64(bytes, v);
  }
  return fnv1a(bytes);
}

std::string Model::label() const {
  if (arch.role == ModelRole::UserDecoder) return to_string(arch.variant);
  return to_string(arch.role);
}

// ---------------------------------------------------------------------------
// Builders

namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

// Off-diagonal GDN coupling starts (numerically) at zero.
constexpr double kGammaOffDiagonalRaw = -10.0;
constexpr double kGammaInit = 0.1;
constexpr double kSlopeInit = 0.25;

class Builder {
 public:
  Builder(Model& m, std::uint64_t seed) : m_(m), rng_(seed) {}

  LayerSpec conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                 std::size_t pad) {
    LayerSpec s{LayerKind::Conv, name, in, out, k, stride, pad};
    m_.params.add(name + ".kernel", uniform({out, in, k, k}, static_cast<double>(in * k * k)));
    m_.params.add(name + ".bias", Tensor({out}));
    return s;
  }

  LayerSpec tconv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                  std::size_t pad, std::size_t output_pad) {
    LayerSpec s{LayerKind::TConv, name, in, out, k, stride, pad, output_pad};
    const double fan = static_cast<double>(in * k * k) / static_cast<double>(stride * stride);
    m_.params.add(name + ".kernel", uniform({in, out, k, k}, std::max(fan, 1.0)));
    m_.params.add(name + ".bias", Tensor({out}));
    return s;
  }

  LayerSpec norm(const std::string& name, std::size_t c, bool inverse) {
    LayerSpec s{inverse ? LayerKind::Igdn : LayerKind::Gdn, name, c, c};
    m_.params.add(name + ".beta_raw", Tensor::full({c}, inverse_softplus(1.0 - kGdnFloor)));
    Tensor gamma = Tensor::full({c, c}, kGammaOffDiagonalRaw);
    for (std::size_t i = 0; i < c; ++i) gamma[i * c + i] = inverse_softplus(kGammaInit - kGdnFloor);
    m_.params.add(name + ".gamma_raw", std::move(gamma));
    return s;
  }

  LayerSpec prelu(const std::string& name, std::size_t c) {
    m_.params.add(name + ".slope", Tensor::full({c}, kSlopeInit));
    return LayerSpec{LayerKind::Prelu, name, c, c};
  }

  LayerSpec sigmoid(const std::string& name, std::size_t c) { return LayerSpec{LayerKind::Sigmoid, name, c, c}; }

  LayerSpec pool(const std::string& name, std::size_t c, std::size_t k) {
    LayerSpec s{LayerKind::AvgPool, name, c, c, k, k};
    return s;
  }

  LayerSpec attention(const std::string& name, std::size_t c) {
    const std::size_t hidden = std::max<std::size_t>(1, c / 2);
    m_.params.add(name + ".squeeze.weight", uniform({hidden, c + 1}, static_cast<double>(c + 1)));
    m_.params.add(name + ".squeeze.bias", Tensor({hidden}));
    m_.params.add(name + ".slope", Tensor::full({hidden}, kSlopeInit));
    m_.params.add(name + ".excite.weight", uniform({c, hidden}, static_cast<double>(hidden)));
    m_.params.add(name + ".excite.bias", Tensor({c}));
    return LayerSpec{LayerKind::Attention, name, c, c};
  }

  LayerSpec snr_fuse(const std::string& name, std::size_t c) {
    m_.params.add(name + ".weight", uniform({c, c + 1}, static_cast<double>(c + 1)));
    m_.params.add(name + ".bias", Tensor({c}));
    return LayerSpec{LayerKind::SnrFuse, name, c, c};
  }

 private:
  // He-style fan-in scaled uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  Tensor uniform(Shape shape, double fan_in) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : t.data()) v = rng_.uniform(-bound, bound);
    return t;
  }

  Model& m_;
  Rng rng_;
};

// Output padding that makes a transpose conv land exactly on `target`.
std::size_t output_pad_for(std::size_t in, std::size_t target, std::size_t k, std::size_t stride, std::size_t pad) {
  const long base = static_cast<long>((in - 1) * stride + k) - static_cast<long>(2 * pad);
  const long op = static_cast<long>(target) - base;
  if (op < 0 || op >= static_cast<long>(stride)) {
    throw ShapeError("transpose conv cannot map " + std::to_string(in) + " to " + std::to_string(target));
  }
  return static_cast<std::size_t>(op);
}

}  // namespace

std::vector<Rate> feasible_rates(std::size_t channels) {
  std::vector<Rate> out;
  const std::size_t n = channels * kEncoderStride * kEncoderStride;
  for (std::size_t c = 1; c <= n; ++c) {
    const std::size_t g = std::gcd(c, n);
    out.push_back({c / g, n / g});
  }
  return out;
}

Model build_encoder(const ImageShape& image, const Rate& rate, const Widths& widths, std::uint64_t seed) {
  if (image.height % kEncoderStride != 0 || image.width % kEncoderStride != 0 || image.height == 0 ||
      image.width == 0) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not a multiple of the encoder stride 4");
  }
  const std::size_t cells = image.channels * kEncoderStride * kEncoderStride;
  if (rate.num == 0 || (rate.num * cells) % rate.den != 0 || rate.num * cells < rate.den ||
      rate.num > rate.den) {
    std::string list;
    for (const Rate& r : feasible_rates(image.channels)) list += (list.empty() ? "" : ", ") + to_string(r);
    throw ConfigError("compression rate " + to_string(rate) + " is not achievable with " +
                      std::to_string(image.channels) + " channels and stride 4; feasible rates: " + list);
  }
  const std::size_t c_out = rate.num * cells / rate.den;

  Model m;
  m.arch.role = ModelRole::Encoder;
  m.arch.variant = DecoderVariant::SymmetricMirror;
  m.arch.image = image;
  m.arch.rate = rate;
  m.arch.widths = widths;
  m.arch.latent = {c_out, image.height / kEncoderStride, image.width / kEncoderStride};
  Builder b(m, seed);
  const std::size_t w1 = widths.hidden1, w2 = widths.hidden2;
  m.arch.layers = {
      b.conv("enc.g1.conv", image.channels, w1, 5, 2, 2), b.norm("enc.g1.gdn", w1, false),
      b.prelu("enc.g1.prelu", w1),
      b.conv("enc.g2.conv", w1, w2, 5, 2, 2), b.norm("enc.g2.gdn", w2, false),
      b.prelu("enc.g2.prelu", w2),
      b.attention("enc.attn", w2),
      b.conv("enc.out", w2, c_out, 3, 1, 1),
  };
  return m;
}

Model build_symmetric_decoder(const Model& encoder, std::uint64_t seed) {
  if (encoder.arch.role != ModelRole::Encoder) throw Error("symmetric decoder must mirror an encoder");
  Model m;
  m.arch = encoder.arch;
  m.arch.role = ModelRole::SymmetricDecoder;
  m.arch.variant = DecoderVariant::SymmetricMirror;
  m.arch.layers.clear();

  // Spatial size entering each encoder layer.
  std::vector<std::size_t> sizes;
  std::size_t size = encoder.arch.image.height;
  for (const LayerSpec& l : encoder.arch.layers) {
    sizes.push_back(size);
    if (l.kind == LayerKind::Conv) size = (size + 2 * l.pad - l.kernel) / l.stride + 1;
  }

  Builder b(m, seed);
  const auto& enc = encoder.arch.layers;
  for (std::size_t r = enc.size(); r-- > 0;) {
    const LayerSpec& l = enc[r];
    const std::string name = "sym." + std::to_string(enc.size() - 1 - r) + ".";
    const std::size_t out_size = (l.kind == LayerKind::Conv) ? (sizes[r] + 2 * l.pad - l.kernel) / l.stride + 1 : sizes[r];
    switch (l.kind) {
      case LayerKind::Conv:
        m.arch.layers.push_back(b.tconv(name + "tconv", l.out_channels, l.in_channels, l.kernel, l.stride, l.pad,
                                        output_pad_for(out_size, sizes[r], l.kernel, l.stride, l.pad)));
        break;
      case LayerKind::Gdn: m.arch.layers.push_back(b.norm(name + "igdn", l.in_channels, true)); break;
      case LayerKind::Prelu: m.arch.layers.push_back(b.prelu(name + "prelu", l.in_channels)); break;
      case LayerKind::Attention: m.arch.layers.push_back(b.attention(name + "attn", l.in_channels)); break;
      default: throw Error("cannot mirror encoder layer of kind " + to_string(l.kind));
    }
  }
  m.arch.layers.push_back(b.sigmoid("sym.sigmoid", encoder.arch.image.channels));
  return m;
}

Model build_user_decoder(DecoderVariant variant, std::size_t depth_scale, const Shape& latent, const ImageShape& image,
                         const Widths& widths, std::uint64_t seed) {
  if (variant == DecoderVariant::SymmetricMirror) throw Error("use build_symmetric_decoder for the mirror decoder");
  if (depth_scale < 1) throw ConfigError("depth_scale must be >= 1");
  if (latent.size() != 3 || latent[1] * kEncoderStride != image.height || latent[2] * kEncoderStride != image.width) {
    throw ShapeError("decoder cannot reach image " + std::to_string(image.channels) + "x" +
                     std::to_string(image.height) + "x" + std::to_string(image.width) + " from latent " +
                     shape_str(latent));
  }
  Model m;
  m.arch.role = ModelRole::UserDecoder;
  m.arch.variant = variant;
  m.arch.depth_scale = depth_scale;
  m.arch.image = image;
  m.arch.latent = latent;
  m.arch.widths = widths;
  m.arch.rate = {shape_numel(latent), image.numel()};
  {
    const std::size_t g = std::gcd(m.arch.rate.num, m.arch.rate.den);
    m.arch.rate.num /= g;
    m.arch.rate.den /= g;
  }
  const std::size_t c = latent[0], w1 = widths.hidden1, w2 = widths.hidden2, out_c = image.channels;
  const std::string v = to_string(variant);
  Builder b(m, seed);
  auto& L = m.arch.layers;
  auto id = [&](const std::string& s) { return v + "." + s; };

  switch (variant) {
    case DecoderVariant::Attention: {
      std::size_t in = c;
      for (std::size_t d = 0; d < depth_scale; ++d) {
        const std::string p = "m" + std::to_string(d) + ".";
        L.push_back(b.tconv(id(p + "tconv"), in, w2, 3, 1, 1, 0));
        L.push_back(b.norm(id(p + "igdn"), w2, true));
        L.push_back(b.prelu(id(p + "prelu"), w2));
        L.push_back(b.attention(id(p + "attn"), w2));
        in = w2;
      }
      L.push_back(b.tconv(id("up1.tconv"), w2, w1, 5, 2, 2, 1));
      L.push_back(b.norm(id("up1.igdn"), w1, true));
      L.push_back(b.prelu(id("up1.prelu"), w1));
      L.push_back(b.attention(id("up1.attn"), w1));
      L.push_back(b.tconv(id("up2.tconv"), w1, out_c, 5, 2, 2, 1));
      L.push_back(b.sigmoid(id("sigmoid"), out_c));
      break;
    }
    case DecoderVariant::Conv: {
      std::size_t in = c;
      for (std::size_t d = 0; d < depth_scale; ++d) {
        const std::string p = "m" + std::to_string(d) + ".";
        L.push_back(b.tconv(id(p + "tconv"), in, w2, 3, 1, 1, 0));
        L.push_back(b.norm(id(p + "gdn"), w2, false));
        L.push_back(b.prelu(id(p + "prelu"), w2));
        L.push_back(b.snr_fuse(id(p + "fuse"), w2));
        in = w2;
      }
      L.push_back(b.tconv(id("up1.tconv"), w2, w1, 5, 2, 2, 1));
      L.push_back(b.norm(id("up1.gdn"), w1, false));
      L.push_back(b.prelu(id("up1.prelu"), w1));
      L.push_back(b.snr_fuse(id("up1.fuse"), w1));
      L.push_back(b.tconv(id("up2.tconv"), w1, out_c, 5, 2, 2, 1));
      L.push_back(b.sigmoid(id("sigmoid"), out_c));
      break;
    }
    case DecoderVariant::ResNet: {
      // Blocks: entry (c -> w2), upsample (w2 -> w1), identity x depth_scale,
      // upsample (w1 -> w1), exit (w1 -> C, sigmoid, no SNR fusion).
      std::size_t index = 0;
      auto block = [&](std::size_t in, std::size_t out, bool upsample, bool last) {
        const std::string p = "b" + std::to_string(++index) + ".";
        LayerSpec r{LayerKind::Residual, id(p.substr(0, p.size() - 1)), in, out};
        if (upsample) {
          r.body.push_back(b.tconv(id(p + "tconv"), in, out, 5, 2, 2, 1));
        } else {
          r.body.push_back(b.tconv(id(p + "tconv"), in, out, 3, 1, 1, 0));
        }
        r.body.push_back(b.norm(id(p + "gdn"), out, false));
        if (!last) r.body.push_back(b.snr_fuse(id(p + "fuse"), out));
        if (upsample) {
          r.shortcut.push_back(b.tconv(id(p + "skip"), in, out, 2, 2, 0, 0));
        } else if (in != out) {
          r.shortcut.push_back(b.tconv(id(p + "skip"), in, out, 1, 1, 0, 0));
        }
        r.after.push_back(last ? b.sigmoid(id(p + "sigmoid"), out) : b.prelu(id(p + "prelu"), out));
        L.push_back(std::move(r));
      };
      block(c, w2, false, false);
      block(w2, w1, true, false);
      for (std::size_t d = 0; d < depth_scale; ++d) block(w1, w1, false, false);
      block(w1, w1, true, false);
      block(w1, out_c, false, true);
      break;
    }
    case DecoderVariant::VGG: {
      // Each group: two stride-2 transpose convs (x4) then a 2x2 average pool (/2).
      L.push_back(b.tconv(id("g1.tconv1"), c, w1, 3, 2, 1, 1));
      L.push_back(b.prelu(id("g1.prelu1"), w1));
      L.push_back(b.tconv(id("g1.tconv2"), w1, w1, 3, 2, 1, 1));
      L.push_back(b.prelu(id("g1.prelu2"), w1));
      L.push_back(b.pool(id("g1.pool"), w1, 2));
      for (std::size_t d = 1; d < depth_scale; ++d) {
        const std::string p = "m" + std::to_string(d) + ".";
        L.push_back(b.tconv(id(p + "tconv"), w1, w1, 3, 1, 1, 0));
        L.push_back(b.prelu(id(p + "prelu"), w1));
      }
      L.push_back(b.tconv(id("g2.tconv1"), w1, w1, 3, 2, 1, 1));
      L.push_back(b.prelu(id("g2.prelu1"), w1));
      L.push_back(b.tconv(id("g2.tconv2"), w1, out_c, 3, 2, 1, 1));
      L.push_back(b.pool(id("g2.pool"), out_c, 2));
      L.push_back(b.snr_fuse(id("fuse"), out_c));
      L.push_back(b.sigmoid(id("sigmoid"), out_c));
      break;
    }
    case DecoderVariant::SymmetricMirror: break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

class Binder {
 public:
  Binder(Tape& tape, Model* mutable_model, const Model& model) : tape_(tape), mutable_(mutable_model), model_(model) {}

  Var get(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v;
    if (mutable_ != nullptr && !mutable_->frozen() && mutable_->params.at(name).requires_grad()) {
      v = tape_.parameter(mutable_->params.at(name));
    } else {
      v = tape_.constant(Tensor(model_.params.at(name).shape(), model_.params.at(name).values()));
    }
    cache_.emplace(name, v);
    return v;
  }

 private:
  Tape& tape_;
  Model* mutable_;
  const Model& model_;
  std::unordered_map<std::string, Var> cache_;
};

Var run_layers(const std::vector<LayerSpec>& layers, Var x, double snr_db, Binder& p) {
  for (const LayerSpec& l : layers) {
    const std::string& n = l.name;
    switch (l.kind) {
      case LayerKind::Conv: x = conv2d(x, p.get(n + ".kernel"), p.get(n + ".bias"), l.stride, l.pad); break;
      case LayerKind::TConv:
        x = tconv2d(x, p.get(n + ".kernel"), p.get(n + ".bias"), l.stride, l.pad, l.output_pad);
        break;
      case LayerKind::Gdn: x = gdn(x, positive(p.get(n + ".beta_raw")), positive(p.get(n + ".gamma_raw"))); break;
      case LayerKind::Igdn: x = igdn(x, positive(p.get(n + ".beta_raw")), positive(p.get(n + ".gamma_raw"))); break;
      case LayerKind::Prelu: x = prelu(x, p.get(n + ".slope")); break;
      case LayerKind::Sigmoid: x = sigmoid(x); break;
      case LayerKind::AvgPool: x = avg_pool(x, l.kernel); break;
      case LayerKind::Attention:
        x = channel_attention(x, snr_db,
                              {{p.get(n + ".squeeze.weight"), p.get(n + ".squeeze.bias")},
                               p.get(n + ".slope"),
                               {p.get(n + ".excite.weight"), p.get(n + ".excite.bias")}});
        break;
      case LayerKind::SnrFuse: x = snr_fuse_dense(x, snr_db, {p.get(n + ".weight"), p.get(n + ".bias")}); break;
      case LayerKind::Residual: {
        Var branch = run_layers(l.body, x, snr_db, p);
        Var skip = l.shortcut.empty() ? x : run_layers(l.shortcut, x, snr_db, p);
        x = run_layers(l.after, add(branch, skip), snr_db, p);
        break;
      }
    }
  }
  return x;
}

Var prepare_input(const Model& model, Var x) {
  const Architecture& a = model.arch;
  const Shape& s = x.shape();
  if (a.role == ModelRole::Encoder) {
    if (s.size() != 4 || s[1] != a.image.channels || s[2] != a.image.height || s[3] != a.image.width) {
      throw ShapeError("encoder expects images [N," + std::to_string(a.image.channels) + "," +
                       std::to_string(a.image.height) + "," + std::to_string(a.image.width) + "], got " +
                       shape_str(s));
    }
    return x;
  }
  const std::size_t k = shape_numel(a.latent);
  if (s.empty() || x.numel() / s[0] != k || x.numel() % s[0] != 0) {
    throw ShapeError("decoder expects " + std::to_string(k) + " latent values per image (" + shape_str(a.latent) +
                     "), got " + shape_str(s));
  }
  if (s.size() == 4 && Shape(s.begin() + 1, s.end()) == a.latent) return x;
  return reshape(x, {s[0], a.latent[0], a.latent[1], a.latent[2]});
}

}  // namespace

Var forward(Model& model, Var x, double snr_db) {
  Binder binder(*x.tape(), &model, model);
  return run_layers(model.arch.layers, prepare_input(model, x), snr_db, binder);
}

Var forward(const Model& model, Var x, double snr_db) {
  Binder binder(*x.tape(), nullptr, model);
  return run_layers(model.arch.layers, prepare_input(model, x), snr_db, binder);
}

Tensor encode(const Model& encoder, const Tensor& images, double snr_db) {
  if (encoder.arch.role != ModelRole::Encoder) throw Error("encode() needs an encoder model");
  Tape tape;
  Tensor out = forward(encoder, tape.constant(images), snr_db).value();
  return out;
}

Tensor decode(const Model& decoder, const Tensor& latents, double snr_db) {
  if (decoder.arch.role == ModelRole::Encoder) throw Error("decode() needs a decoder model");
  Tape tape;
  Tensor out = forward(decoder, tape.constant(latents), snr_db).value();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'J', 'S', 'C', 'C', 'K', 'P', 'T'};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b_[off_ + i]} << (8 * i);
    off_ += static_cast<std::size_t>(bytes);
    return v;
  }
  double f64() {
    const std::uint64_t bits = uint(8);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&b_[off_]), n);
    off_ += n;
    return s;
  }
  std::size_t offset() const { return off_; }
  bool done() const { return off_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (off_ + n > b_.size()) throw IoError("truncated checkpoint at offset " + std::to_string(off_));
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t off_ = 0;
};

std::string latent_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model, std::uint64_t seed) {
  const Architecture& a = model.arch;
  std::ostringstream h;
  h << "role=" << to_string(a.role) << "\n"
    << "variant=" << to_string(a.variant) << "\n"
    << "depth_scale=" << a.depth_scale << "\n"
    << "image=" << a.image.channels << "x" << a.image.height << "x" << a.image.width << "\n"
    << "latent=" << latent_str(a.latent) << "\n"
    << "rate=" << to_string(a.rate) << "\n"
    << "widths=" << a.widths.hidden1 << "x" << a.widths.hidden2 << "\n"
    << "frozen=" << (model.frozen() ? 1 : 0) << "\n"
    << "seed=" << seed << "\n";
  const std::string header = h.str();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& it : model.params.items()) {
    put_u32(out, static_cast<std::uint32_t>(it.name.size()));
    out.insert(out.end(), it.name.begin(), it.name.end());
    put_u32(out, static_cast<std::uint32_t>(it.tensor.rank()));
    for (std::size_t d : it.tensor.shape()) put_u64(out, d);
    for (double v : it.tensor.data()) put_f64(out, v);
  }
  return out;
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.text(8) != std::string(kMagic, 8)) throw IoError("not a checkpoint file (bad magic at offset 0)");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::string header = r.text(r.uint(4));

  std::unordered_map<std::string, std::string> kv;
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw IoError("checkpoint header lacks '" + k + "'");
    return it->second;
  };
  auto dims = [&](const std::string& k) {
    std::vector<std::size_t> out;
    std::istringstream ds(field(k));
    for (std::string part; std::getline(ds, part, 'x');) out.push_back(std::stoul(part));
    return out;
  };
  const auto img = dims("image");
  const auto wid = dims("widths");
  if (img.size() != 3 || wid.size() != 2) throw IoError("malformed checkpoint header");
  const ImageShape image{img[0], img[1], img[2]};
  const Widths widths{wid[0], wid[1]};
  const std::string role = field("role");

  Model m;
  if (role == "encoder") {
    m = build_encoder(image, parse_rate(field("rate")), widths, 0);
  } else if (role == "symmetric") {
    m = build_symmetric_decoder(build_encoder(image, parse_rate(field("rate")), widths, 0), 0);
  } else if (role == "decoder") {
    m = build_user_decoder(parse_decoder_variant(field("variant")), std::stoul(field("depth_scale")), dims("latent"),
                           image, widths, 0);
  } else {
    throw IoError("unknown model role '" + role + "' in checkpoint");
  }

  const std::size_t count = r.uint(4);
  if (count != m.params.size()) {
    throw IoError("checkpoint has " + std::to_string(count) + " tensors, architecture expects " +
                  std::to_string(m.params.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.text(r.uint(4));
    Shape shape(r.uint(4));
    for (auto& d : shape) d = r.uint(8);
    if (!m.params.contains(name)) throw IoError("checkpoint tensor '" + name + "' is not part of the architecture");
    Tensor& t = m.params.at(name);
    if (t.shape() != shape) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                    shape_str(t.shape()));
    }
    for (double& v : t.data()) v = r.f64();
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint tensors at offset " + std::to_string(r.offset()));
  if (field("frozen") == "1") m.freeze();
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, std::uint64_t seed) {
  const auto bytes = serialize_model(model, seed);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace djscc
