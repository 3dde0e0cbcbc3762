#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "djscc/autodiff.hpp"

namespace djscc {

enum class LayerKind { Conv, TConv, Gdn, Igdn, Prelu, Sigmoid, AvgPool, Attention, SnrFuse, Residual };

std::string to_string(LayerKind kind);

/// One step of a network. Parameters live in ModelParams under "<name>.<field>".
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_pad = 0;
  // Residual only: out = after(body(x) + shortcut(x)); an empty shortcut is the identity.
  std::vector<LayerSpec> body;
  std::vector<LayerSpec> shortcut;
  std::vector<LayerSpec> after;
};

enum class ModelRole { Encoder, SymmetricDecoder, UserDecoder };
enum class DecoderVariant { Attention, Conv, ResNet, VGG, SymmetricMirror };

std::string to_string(ModelRole role);
std::string to_string(DecoderVariant variant);
DecoderVariant parse_decoder_variant(const std::string& text);

struct Rate {
  std::size_t num = 1;
  std::size_t den = 16;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

Rate parse_rate(const std::string& text);
std::string to_string(const Rate& r);

struct Widths {
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 128;
};

struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t numel() const { return channels * height * width; }
};

inline constexpr std::size_t kEncoderStride = 4;

struct Architecture {
  ModelRole role = ModelRole::Encoder;
  DecoderVariant variant = DecoderVariant::Attention;
  std::size_t depth_scale = 1;
  ImageShape image;
  Rate rate;
  Widths widths;
  Shape latent;  // [c_out, H/4, W/4]
  std::vector<LayerSpec> layers;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered name -> tensor map for one network.
class ModelParams {
 public:
  Tensor& add(std::string name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t param_count() const;

 private:
  std::vector<NamedTensor> items_;
};

class Model {
 public:
  Architecture arch;
  ModelParams params;

  bool frozen() const { return frozen_; }
  // Clears requires_grad on every tensor; optimizers reject frozen models.
  void freeze();
  std::uint64_t checksum() const;
  std::size_t latent_size() const { return shape_numel(arch.latent); }
  std::string label() const;

 private:
  bool frozen_ = false;
};

/// Encoder: [conv5 s2 + GDN + PReLU] x2, SNR channel attention, conv3 to c_out
/// channels where c_out = rate * C * 16. Throws ConfigError listing feasible rates
/// when the rate does not give an integer channel count.
Model build_encoder(const ImageShape& image, const Rate& rate, const Widths& widths, std::uint64_t seed);

/// Mirror of an encoder: reversed layer list with conv <-> tconv and
/// GDN <-> IGDN, then a sigmoid. Parameters are freshly initialized.
Model build_symmetric_decoder(const Model& encoder, std::uint64_t seed);

/// One of the four user decoder families (SymmetricMirror is rejected here).
Model build_user_decoder(DecoderVariant variant, std::size_t depth_scale, const Shape& latent, const ImageShape& image,
                         const Widths& widths, std::uint64_t seed);

/// Feasible rates c / (C * 16) for c = 1 .. C * 16.
std::vector<Rate> feasible_rates(std::size_t channels);

/// Runs the network on x. Tensors that require gradients are bound as tape
/// parameters; a frozen model contributes constants only.
Var forward(Model& model, Var x, double snr_db);
Var forward(const Model& model, Var x, double snr_db);

/// E(I, snr): images [N,C,H,W] -> latents [N, c_out, H/4, W/4].
Tensor encode(const Model& encoder, const Tensor& images, double snr_db);
/// D(y, snr): latents [N, ...] with k values per element -> images in [0, 1].
Tensor decode(const Model& decoder, const Tensor& latents, double snr_db);

// Checkpoint container: magic "DJSCCKPT", u32 version, u32 header length,
// key=value header text, u32 tensor count, then per tensor u32 name length,
// name, u32 rank, u64 dims, little-endian f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model, std::uint64_t seed = 0);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path, std::uint64_t seed = 0);
Model load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over a byte string; used for checkpoint and snapshot checksums.
std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes);

}  // namespace djscc
