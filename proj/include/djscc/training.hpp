#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "djscc/channel.hpp"
#include "djscc/image_io.hpp"
#include "djscc/models.hpp"

namespace djscc {

enum class Schedule { TwoStage, Iterative, Simultaneous };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& text);

struct LossPoint {
  std::string phase;  // stage1, stage2, iterative, end_to_end, simultaneous
  std::size_t epoch = 0;
  std::string model;
  double loss = 0.0;
};

using LossCurve = std::vector<LossPoint>;

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 40;
  std::vector<double> snr_set_db{1, 4, 7, 10, 13};
  std::size_t epochs_stage1 = 30;
  std::size_t epochs_per_decoder = 30;
  std::size_t iterative_cycles = 30;
  std::size_t simultaneous_epochs = 30;
  std::uint64_t seed = 0;
  ChannelKind channel = ChannelKind::Awgn;
  Rate rate;
  Schedule schedule = Schedule::TwoStage;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // sigma = 0 channel (identity), for overfitting checks.
  bool noiseless = false;
  // Called after every epoch; not part of the configuration proper.
  std::function<void(const LossPoint&)> on_epoch;

  // Every violated invariant, one message each.
  std::vector<std::string> problems() const;
  // Throws ConfigError listing all problems at once.
  void validate() const;
};

/// First and second moments per parameter tensor, in ModelParams order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  AdamState(const Model& model, double beta1, double beta2, double eps);
  AdamState(const Model& model, const TrainConfig& cfg) : AdamState(model, cfg.beta1, cfg.beta2, cfg.eps) {}
};

/// One bias-corrected Adam update from the gradients accumulated in the model's
/// tensors (absent gradients count as zero), then clears them. Throws on a
/// frozen model or on non-finite gradients.
void adam_step(Model& model, AdamState& state, double lr);

Var mse_loss(Var target, Var reconstruction);
double mse_loss(const Tensor& target, const Tensor& reconstruction);

/// Encoder + symmetric decoder, trained jointly through the channel.
LossCurve train_stage1(Model& encoder, Model& symmetric, const ImageBatch& data, const TrainConfig& cfg);

/// Marks the encoder frozen and returns its checksum.
std::uint64_t freeze_encoder(Model& encoder);

/// Trains one decoder against a frozen anchor. The result depends only on the
/// anchor, the data, cfg and decoder_seed.
LossCurve train_stage2_decoder(const Model& anchor, Model& decoder, const ImageBatch& data, const TrainConfig& cfg,
                               std::uint64_t decoder_seed);

/// Per-decoder stage-2 seed, derived from the run seed and the decoder label.
std::uint64_t stage2_seed(std::uint64_t run_seed, const Model& decoder);

struct TwoStageResult {
  LossCurve curve;
  std::uint64_t anchor_checksum = 0;
};

/// Stage 1, freeze, then every decoder in turn against the anchor.
TwoStageResult train_two_stage(Model& encoder, Model& symmetric, std::vector<Model>& decoders,
                               const ImageBatch& data, const TrainConfig& cfg);

/// Plain single-user encoder/decoder training for `epochs` epochs.
LossCurve train_end_to_end(Model& encoder, Model& decoder, const ImageBatch& data, const TrainConfig& cfg,
                           std::size_t epochs);

struct Snapshot {
  std::size_t step = 0;           // global epoch index t = cycle * D + k
  std::size_t cycle = 0;
  std::size_t decoder_index = 0;  // decoder trained in epoch t
  Model encoder;                  // encoder right after epoch t
  Model decoder;                  // decoder k right after epoch t
};

struct IterativeResult {
  LossCurve curve;
  std::vector<Snapshot> snapshots;  // iterative_cycles * decoders.size()
};

/// Cycles the encoder over the decoders, one epoch per pairing.
IterativeResult train_iterative(Model& encoder, std::vector<Model>& decoders, const ImageBatch& data,
                                const TrainConfig& cfg);

/// One shared encoding, a fresh channel draw per decoder, summed loss.
LossCurve train_simultaneous(Model& encoder, std::vector<Model>& decoders, const ImageBatch& data,
                             const TrainConfig& cfg);

struct SimultaneousGradients {
  std::vector<double> joint;                  // encoder gradient of the summed loss
  std::vector<std::vector<double>> per_path;  // encoder gradient of each decoder's loss alone
  std::vector<double> path_losses;
  double total_loss = 0.0;
};

/// Encoder gradients for one batch, with the channel draws shared between the
/// joint pass and the per-path passes. Leaves no gradients behind.
SimultaneousGradients simultaneous_encoder_gradients(Model& encoder, std::vector<Model>& decoders,
                                                     const Tensor& images, double snr_db, ChannelKind kind,
                                                     std::uint64_t seed, bool noiseless = false);

struct EvalPoint {
  double snr_db = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
};

/// Mean per-image PSNR and MS-SSIM at each SNR. The channel draws depend only
/// on (eval_seed, snr), so every model sees the same noise.
std::vector<EvalPoint> evaluate(const Model& encoder, const Model& decoder, const ImageBatch& data,
                                const std::vector<double>& snrs, ChannelKind kind, std::uint64_t eval_seed,
                                std::size_t batch_size = 64);

struct ForgettingEntry {
  std::size_t decoder_index = 0;
  std::string decoder;
  std::string label;            // Targeted, After-1, ...
  std::size_t offset = 0;       // epochs after the targeted one
  std::size_t snapshot = 0;     // encoder snapshot step
  std::vector<EvalPoint> points;
  double mean_psnr() const;
  double mean_ms_ssim() const;
};

struct ForgettingReport {
  std::vector<std::string> decoders;
  std::vector<std::string> labels;
  std::vector<ForgettingEntry> entries;  // decoder-major, then label

  const ForgettingEntry& at(std::size_t decoder_index, std::size_t offset) const;
};

std::string forgetting_label(std::size_t offset);

/// For each decoder k, Targeted is the encoder snapshot right after its most
/// recent epoch that still has `min(3, D - 1)` later snapshots; After-j pairs
/// the snapshot j epochs later with the decoder frozen at the targeted epoch.
ForgettingReport forgetting_eval(const std::vector<Snapshot>& snapshots, std::size_t num_decoders,
                                 const ImageBatch& eval_data, const std::vector<double>& snrs, ChannelKind kind,
                                 std::uint64_t eval_seed);

}  // namespace djscc
