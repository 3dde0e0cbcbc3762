#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "djscc/training.hpp"

namespace djscc {

namespace fs = std::filesystem;

/// Everything one run needs, as read from a sectioned key = value file.
struct ExperimentConfig {
  TrainConfig train;

  // [model]
  Widths widths;
  std::size_t depth_scale = 1;
  std::vector<DecoderVariant> roster{DecoderVariant::Attention, DecoderVariant::Conv, DecoderVariant::ResNet,
                                     DecoderVariant::VGG};

  // [data]
  std::string source = "synth";  // synth | directory
  std::size_t train_count = 512;
  std::size_t eval_count = 128;
  std::size_t patch_size = 32;
  std::uint64_t eval_data_seed = 2;
  std::string train_dir;
  std::string eval_dir;

  // [eval]
  std::vector<double> eval_snrs{1, 4, 7, 10, 13};
  std::string eval_channel = "same";  // same | awgn | rayleigh
  std::uint64_t eval_seed = 7;
  std::size_t eval_batch = 64;

  // [output]
  std::string output_dir = "run";
  bool svg = true;
  std::size_t samples = 1;
  bool snapshots = true;

  ChannelKind eval_kind() const;
  std::vector<std::string> problems() const;
  void validate() const;
};

/// Section.key names in file order.
std::vector<std::string> config_keys();
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
/// Throws ConfigError on an unknown key or a malformed value.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Applies one "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::string format_config(const ExperimentConfig& cfg);
/// Collects every syntax and validation problem before throwing. A [manifest]
/// section is accepted and ignored.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const fs::path& path);

/// output.dir, placed under $DJSCC_OUTPUT_ROOT when relative and the variable is set.
fs::path resolve_output_dir(const std::string& dir);

struct ExperimentData {
  ImageBatch train;
  ImageBatch eval;
};
ExperimentData load_experiment_data(const ExperimentConfig& cfg);
std::uint64_t eval_set_hash(const ImageBatch& eval);

struct EvalRecord {
  std::string schedule;
  std::string decoder;
  std::string channel;
  double snr_db = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  std::uint64_t seed = 0;
  std::string snapshot;
};

inline constexpr const char* kEvalCsvHeader = "schedule,decoder,channel,snr_db,psnr_db,ms_ssim,seed,snapshot";

std::string format_fixed(double v);
std::string eval_csv(const std::vector<EvalRecord>& rows);
std::vector<EvalRecord> parse_eval_csv(const std::string& text);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal line chart: axes, ticks, one polyline per series, legend.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

struct ManifestEntry {
  std::string file;
  std::uint64_t checksum = 0;
};

/// Reads the [manifest] section of a run directory.
std::vector<ManifestEntry> read_manifest(const fs::path& run_dir);

/// Trains the configured schedule and writes checkpoints/, loss.csv and
/// manifest.txt into the output directory. Returns that directory.
fs::path cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Evaluates the final models of a run; writes eval.csv (and samples/, PNG).
/// Keys under [eval] may be overridden.
std::vector<EvalRecord> cmd_eval(const fs::path& run_dir, const std::vector<std::string>& overrides = {},
                                 std::ostream* log = nullptr);

/// Forgetting matrix over the snapshots of an iterative run; writes
/// forgetting.csv and one forgetting_<decoder>.svg per decoder.
ForgettingReport cmd_forgetting(const fs::path& run_dir, std::ostream* log = nullptr);

struct CompareRow {
  std::string decoder;  // "mean" for the average over decoders
  double snr_db = 0.0;
  std::vector<double> psnr;     // one per schedule
  std::vector<double> ms_ssim;  // one per schedule
};

struct CompareReport {
  std::vector<std::string> schedules;
  std::vector<CompareRow> rows;
};

/// Pivots the eval.csv of several runs; writes compare_psnr.csv,
/// compare_ms_ssim.csv and compare_<decoder>.svg into out_dir.
CompareReport cmd_compare(const std::vector<fs::path>& run_dirs, const fs::path& out_dir);

}  // namespace djscc
