#include "djscc/experiment.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "djscc/error.hpp"
#include "djscc/metrics.hpp"
#include "djscc/rng.hpp"

namespace djscc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(to_double(key, p));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define DJSCC_UINT(KEY, MEMBER)                                                                       \
  Field {                                                                                             \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },                         \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_uint(KEY, v); }                 \
  }
#define DJSCC_DOUBLE(KEY, MEMBER)                                                                     \
  Field {                                                                                             \
    KEY, [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); },                             \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }               \
  }
#define DJSCC_STRING(KEY, MEMBER)                                                                     \
  Field {                                                                                             \
    KEY, [](const ExperimentConfig& c) { return c.MEMBER; },                                         \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; }                               \
  }
#define DJSCC_BOOL(KEY, MEMBER)                                                                       \
  Field {                                                                                             \
    KEY, [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); },         \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"train.schedule", [](const ExperimentConfig& c) { return to_string(c.train.schedule); },
       [](ExperimentConfig& c, const std::string& v) { c.train.schedule = parse_schedule(v); }},
      DJSCC_DOUBLE("train.lr", train.lr),
      DJSCC_UINT("train.batch_size", train.batch_size),
      {"train.snr_set", [](const ExperimentConfig& c) { return join_doubles(c.train.snr_set_db); },
       [](ExperimentConfig& c, const std::string& v) { c.train.snr_set_db = to_doubles("train.snr_set", v); }},
      DJSCC_UINT("train.epochs_stage1", train.epochs_stage1),
      DJSCC_UINT("train.epochs_per_decoder", train.epochs_per_decoder),
      DJSCC_UINT("train.iterative_cycles", train.iterative_cycles),
      DJSCC_UINT("train.simultaneous_epochs", train.simultaneous_epochs),
      DJSCC_UINT("train.seed", train.seed),
      {"train.channel", [](const ExperimentConfig& c) { return to_string(c.train.channel); },
       [](ExperimentConfig& c, const std::string& v) { c.train.channel = parse_channel_kind(v); }},
      DJSCC_DOUBLE("train.beta1", train.beta1),
      DJSCC_DOUBLE("train.beta2", train.beta2),
      DJSCC_DOUBLE("train.eps", train.eps),
      {"model.rate", [](const ExperimentConfig& c) { return to_string(c.train.rate); },
       [](ExperimentConfig& c, const std::string& v) { c.train.rate = parse_rate(v); }},
      {"model.widths",
       [](const ExperimentConfig& c) {
         return std::to_string(c.widths.hidden1) + "," + std::to_string(c.widths.hidden2);
       },
       [](ExperimentConfig& c, const std::string& v) {
         const auto parts = split(v, ',');
         if (parts.size() != 2) throw ConfigError("model.widths: expected two comma-separated widths, got '" + v + "'");
         c.widths = {to_uint("model.widths", parts[0]), to_uint("model.widths", parts[1])};
       }},
      DJSCC_UINT("model.depth_scale", depth_scale),
      {"model.roster",
       [](const ExperimentConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.roster.size(); ++i) out += (i ? "," : "") + to_string(c.roster[i]);
         return out;
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.roster.clear();
         if (trim(v).empty()) return;
         for (const auto& p : split(v, ',')) c.roster.push_back(parse_decoder_variant(p));
       }},
      DJSCC_STRING("data.source", source),
      DJSCC_UINT("data.train_count", train_count),
      DJSCC_UINT("data.eval_count", eval_count),
      DJSCC_UINT("data.patch_size", patch_size),
      DJSCC_UINT("data.eval_seed", eval_data_seed),
      DJSCC_STRING("data.train_dir", train_dir),
      DJSCC_STRING("data.eval_dir", eval_dir),
      {"eval.snrs", [](const ExperimentConfig& c) { return join_doubles(c.eval_snrs); },
       [](ExperimentConfig& c, const std::string& v) { c.eval_snrs = to_doubles("eval.snrs", v); }},
      DJSCC_STRING("eval.channel", eval_channel),
      DJSCC_UINT("eval.seed", eval_seed),
      DJSCC_UINT("eval.batch_size", eval_batch),
      DJSCC_STRING("output.dir", output_dir),
      DJSCC_BOOL("output.svg", svg),
      DJSCC_UINT("output.samples", samples),
      DJSCC_BOOL("output.snapshots", snapshots),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ChannelKind ExperimentConfig::eval_kind() const {
  return eval_channel == "same" ? train.channel : parse_channel_kind(eval_channel);
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out = train.problems();
  if (roster.empty()) out.push_back("model.roster must name at least one decoder");
  std::set<DecoderVariant> seen;
  for (DecoderVariant v : roster) {
    if (!seen.insert(v).second) out.push_back("model.roster lists '" + to_string(v) + "' twice");
  }
  if (widths.hidden1 == 0 || widths.hidden2 == 0) out.push_back("model.widths must be positive");
  if (depth_scale == 0) out.push_back("model.depth_scale must be >= 1");
  if (source != "synth" && source != "directory") {
    out.push_back("data.source must be synth or directory, got '" + source + "'");
  }
  if (source == "directory" && (train_dir.empty() || eval_dir.empty())) {
    out.push_back("data.train_dir and data.eval_dir are required when data.source = directory");
  }
  if (source == "synth" && (train_count == 0 || eval_count == 0)) {
    out.push_back("data.train_count and data.eval_count must be >= 1");
  }
  if (patch_size == 0 || patch_size % kEncoderStride != 0) {
    out.push_back("data.patch_size must be a positive multiple of " + std::to_string(kEncoderStride));
  }
  if (eval_snrs.empty()) out.push_back("eval.snrs must not be empty");
  if (eval_channel != "same" && eval_channel != "awgn" && eval_channel != "rayleigh") {
    out.push_back("eval.channel must be same, awgn or rayleigh, got '" + eval_channel + "'");
  }
  if (eval_batch == 0) out.push_back("eval.batch_size must be >= 1");
  if (output_dir.empty()) out.push_back("output.dir must not be empty");
  return out;
}

void ExperimentConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  return f->get(cfg);
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, trim(value));
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::istringstream is(text);
  std::string line, section;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "unterminated section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    if (section == "manifest") continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    if (section.empty()) {
      errors.push_back(where + "key outside of any section");
      continue;
    }
    try {
      set_config_value(cfg, section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      errors.push_back(where + e.what());
    }
  }
  for (const auto& p : cfg.problems()) errors.push_back(origin + ": " + p);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.string());
}

fs::path resolve_output_dir(const std::string& dir) {
  const fs::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DJSCC_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.source == "synth") {
    d.train = synth_dataset(cfg.train_count, cfg.patch_size, mix_seed(cfg.train.seed, 1));
    d.eval = synth_dataset(cfg.eval_count, cfg.patch_size, cfg.eval_data_seed);
  } else {
    d.train = load_directory_patches(cfg.train_dir, cfg.patch_size);
    d.eval = load_directory_patches(cfg.eval_dir, cfg.patch_size);
  }
  return d;
}

std::uint64_t eval_set_hash(const ImageBatch& eval) {
  std::vector<std::uint8_t> bytes(eval.images.numel() * sizeof(double));
  std::memcpy(bytes.data(), eval.images.data().data(), bytes.size());
  return fnv1a(bytes);
}

namespace {

constexpr std::uint64_t kEncoderSeed = 10, kSymmetricSeed = 11, kDecoderSeedBase = 100;

std::string snapshot_name(std::size_t step, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "snapshots/t%03zu_%s.ckpt", step, what);
  return buf;
}

class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& rel, const std::vector<std::uint8_t>& bytes, bool listed = true) {
    write_file(dir_ / rel, bytes);
    if (listed) entries_.push_back({rel, fnv1a(bytes)});
  }
  void write(const std::string& rel, const std::string& text, bool listed = true) {
    write(rel, std::vector<std::uint8_t>(text.begin(), text.end()), listed);
  }
  const std::vector<ManifestEntry>& entries() const { return entries_; }

 private:
  fs::path dir_;
  std::vector<ManifestEntry> entries_;
};

std::string loss_csv(const LossCurve& curve) {
  std::ostringstream os;
  os << "phase,epoch,model,loss\n";
  for (const auto& p : curve) os << p.phase << ',' << p.epoch << ',' << p.model << ',' << format_fixed(p.loss) << '\n';
  return os.str();
}

ExperimentConfig run_config(const fs::path& run_dir) {
  const fs::path manifest = run_dir / "manifest.txt";
  if (!fs::exists(manifest)) throw IoError("no manifest.txt in run directory " + run_dir.string());
  return load_config(manifest);
}

struct LoadedRun {
  ExperimentConfig cfg;
  Model encoder;
  std::vector<Model> decoders;
};

LoadedRun load_run(const fs::path& run_dir) {
  LoadedRun r{run_config(run_dir), {}, {}};
  r.encoder = load_checkpoint(run_dir / "checkpoints" / "encoder.ckpt");
  for (DecoderVariant v : r.cfg.roster) {
    Model probe;
    probe.arch.role = ModelRole::UserDecoder;
    probe.arch.variant = v;
    probe.arch.depth_scale = r.cfg.depth_scale;
    r.decoders.push_back(load_checkpoint(run_dir / "checkpoints" / (probe.label() + ".ckpt")));
  }
  return r;
}

// Same per-image channel stream as evaluate().
Tensor reconstruct_one(const Model& enc, const Model& dec, const ImageBatch& data, std::size_t index, double snr,
                       ChannelKind kind, std::uint64_t eval_seed) {
  std::uint64_t bits;
  std::memcpy(&bits, &snr, sizeof bits);
  Rng rng = Rng(mix_seed(eval_seed, bits)).split(index);
  Tape tape;
  Var s = power_normalize(forward(enc, tape.constant(data.gather({index})), snr));
  const auto real = draw_realization(kind, snr, s.shape(), rng);
  Tensor rec = forward(dec, transmit(s, real), snr).value();
  return rec.reshaped({rec.dim(1), rec.dim(2), rec.dim(3)});
}

std::string snr_tag(double snr) {
  std::string s = fmt_double(snr);
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& run_dir) {
  const auto bytes = read_file(run_dir / "manifest.txt");
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  std::string line, section;
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    if (section != "[manifest]") continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "eval_set") continue;
    out.push_back({key, std::stoull(val, nullptr, 16)});
  }
  return out;
}

fs::path cmd_train(const ExperimentConfig& in, std::ostream* log) {
  in.validate();
  ExperimentConfig cfg = in;
  const fs::path dir = resolve_output_dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  const ExperimentData data = load_experiment_data(cfg);
  const ImageShape image{3, cfg.patch_size, cfg.patch_size};
  const std::uint64_t seed = cfg.train.seed;
  const std::uint64_t enc_seed = mix_seed(seed, kEncoderSeed);
  Model encoder = build_encoder(image, cfg.train.rate, cfg.widths, enc_seed);
  std::vector<Model> decoders;
  std::vector<std::uint64_t> dec_seeds;
  for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
    dec_seeds.push_back(mix_seed(seed, kDecoderSeedBase + i));
    decoders.push_back(
        build_user_decoder(cfg.roster[i], cfg.depth_scale, encoder.arch.latent, image, cfg.widths, dec_seeds.back()));
  }

  TrainConfig tc = cfg.train;
  if (log) {
    tc.on_epoch = [log](const LossPoint& p) {
      *log << p.phase << " epoch " << p.epoch << " " << p.model << " loss " << format_fixed(p.loss) << std::endl;
    };
  }

  RunWriter out(dir);
  LossCurve curve;
  Model symmetric;
  try {
  switch (cfg.train.schedule) {
    case Schedule::TwoStage: {
      const std::uint64_t sym_seed = mix_seed(seed, kSymmetricSeed);
      symmetric = build_symmetric_decoder(encoder, sym_seed);
      curve = train_two_stage(encoder, symmetric, decoders, data.train, tc).curve;
      out.write("checkpoints/symmetric.ckpt", serialize_model(symmetric, sym_seed));
      break;
    }
    case Schedule::Iterative: {
      auto r = train_iterative(encoder, decoders, data.train, tc);
      curve = std::move(r.curve);
      if (cfg.snapshots) {
        fs::create_directories(dir / "snapshots", ec);
        if (ec) throw IoError("cannot create " + (dir / "snapshots").string() + ": " + ec.message());
        for (const auto& s : r.snapshots) {
          out.write(snapshot_name(s.step, "encoder"), serialize_model(s.encoder, enc_seed));
          out.write(snapshot_name(s.step, "decoder"), serialize_model(s.decoder, dec_seeds[s.decoder_index]));
        }
      }
      break;
    }
    case Schedule::Simultaneous:
      curve = train_simultaneous(encoder, decoders, data.train, tc);
      break;
  }
  } catch (const NumericError&) {
    // The guard fires before the offending update, so these are the last finite states.
    const fs::path keep = dir / "last_good";
    save_checkpoint(encoder, keep / "encoder.ckpt", enc_seed);
    if (!symmetric.params.items().empty()) save_checkpoint(symmetric, keep / "symmetric.ckpt");
    for (std::size_t i = 0; i < decoders.size(); ++i) {
      save_checkpoint(decoders[i], keep / (decoders[i].label() + ".ckpt"), dec_seeds[i]);
    }
    throw;
  }
  out.write("checkpoints/encoder.ckpt", serialize_model(encoder, enc_seed));
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    out.write("checkpoints/" + decoders[i].label() + ".ckpt", serialize_model(decoders[i], dec_seeds[i]));
  }
  out.write("loss.csv", loss_csv(curve));

  std::string manifest = "# reproduce: djscc train --config manifest.txt --set output.dir=<new dir>\n";
  manifest += format_config(cfg);
  manifest += "\n[manifest]\neval_set = " + hex64(eval_set_hash(data.eval)) + "\n";
  for (const auto& e : out.entries()) manifest += e.file + " = " + hex64(e.checksum) + "\n";
  out.write("manifest.txt", manifest, false);
  return dir;
}

std::vector<EvalRecord> cmd_eval(const fs::path& run_dir, const std::vector<std::string>& overrides,
                                 std::ostream* log) {
  LoadedRun run = load_run(run_dir);
  for (const auto& o : overrides) {
    if (o.rfind("eval.", 0) != 0 && o.rfind("output.samples", 0) != 0) {
      throw ConfigError("only eval.* and output.samples may be overridden at evaluation, got '" + o + "'");
    }
    apply_override(run.cfg, o);
  }
  run.cfg.validate();
  const ExperimentConfig& cfg = run.cfg;
  const ImageBatch eval = load_experiment_data(cfg).eval;
  const ChannelKind kind = cfg.eval_kind();

  std::vector<EvalRecord> rows;
  for (const Model& dec : run.decoders) {
    const auto pts = evaluate(run.encoder, dec, eval, cfg.eval_snrs, kind, cfg.eval_seed, cfg.eval_batch);
    for (const auto& p : pts) {
      rows.push_back({to_string(cfg.train.schedule), dec.label(), to_string(kind), p.snr_db, p.psnr_db, p.ms_ssim,
                      cfg.train.seed, "final"});
      if (log) *log << dec.label() << " snr " << p.snr_db << " psnr " << format_fixed(p.psnr_db) << std::endl;
    }
  }
  write_file(run_dir / "eval.csv", [&] {
    const std::string t = eval_csv(rows);
    return std::vector<std::uint8_t>(t.begin(), t.end());
  }());

  const std::size_t n_samples = std::min(cfg.samples, eval.size());
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Tensor& all = eval.images;
    const std::size_t per = all.numel() / all.dim(0);
    Tensor original({all.dim(1), all.dim(2), all.dim(3)},
                    std::vector<double>(all.data().begin() + i * per, all.data().begin() + (i + 1) * per));
    save_image(original, run_dir / "samples" / ("original_" + std::to_string(i) + ".png"));
    for (const Model& dec : run.decoders) {
      for (double snr : cfg.eval_snrs) {
        const Tensor rec = reconstruct_one(run.encoder, dec, eval, i, snr, kind, cfg.eval_seed);
        save_image(rec, run_dir / "samples" /
                            (dec.label() + "_snr" + snr_tag(snr) + "_" + std::to_string(i) + ".png"));
      }
    }
  }
  return rows;
}

ForgettingReport cmd_forgetting(const fs::path& run_dir, std::ostream* log) {
  const ExperimentConfig cfg = run_config(run_dir);
  if (cfg.train.schedule != Schedule::Iterative) {
    throw ConfigError("forgetting needs an iterative run, " + run_dir.string() + " is " +
                      to_string(cfg.train.schedule));
  }
  const std::size_t d = cfg.roster.size();
  std::vector<Snapshot> snaps;
  for (std::size_t t = 0; t < cfg.train.iterative_cycles * d; ++t) {
    const fs::path enc = run_dir / snapshot_name(t, "encoder");
    if (!fs::exists(enc)) {
      throw IoError("missing snapshot " + enc.string() + " (was the run trained with output.snapshots = false?)");
    }
    Snapshot s;
    s.step = t;
    s.cycle = t / d;
    s.decoder_index = t % d;
    s.encoder = load_checkpoint(enc);
    s.decoder = load_checkpoint(run_dir / snapshot_name(t, "decoder"));
    snaps.push_back(std::move(s));
  }
  const ImageBatch eval = load_experiment_data(cfg).eval;
  const ChannelKind kind = cfg.eval_kind();
  ForgettingReport rep = forgetting_eval(snaps, d, eval, cfg.eval_snrs, kind, cfg.eval_seed);

  std::vector<EvalRecord> rows;
  for (const auto& e : rep.entries) {
    for (const auto& p : e.points) {
      rows.push_back({"iterative", e.decoder, to_string(kind), p.snr_db, p.psnr_db, p.ms_ssim, cfg.train.seed,
                      e.label});
    }
    if (log) *log << e.decoder << " " << e.label << " mean psnr " << format_fixed(e.mean_psnr()) << std::endl;
  }
  const std::string csv = eval_csv(rows);
  write_file(run_dir / "forgetting.csv", std::vector<std::uint8_t>(csv.begin(), csv.end()));
  if (cfg.svg) {
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<Series> series;
      for (std::size_t j = 0; j < rep.labels.size(); ++j) {
        const auto& e = rep.at(k, j);
        Series s{e.label, {}, {}};
        for (const auto& p : e.points) {
          s.x.push_back(p.snr_db);
          s.y.push_back(p.psnr_db);
        }
        series.push_back(std::move(s));
      }
      const std::string svg = line_chart_svg("Forgetting: " + rep.decoders[k], "SNR (dB)", "PSNR (dB)", series);
      write_file(run_dir / ("forgetting_" + rep.decoders[k] + ".svg"),
                 std::vector<std::uint8_t>(svg.begin(), svg.end()));
    }
  }
  return rep;
}

CompareReport cmd_compare(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("compare needs at least one run directory");
  CompareReport rep;
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>> cells;
  std::vector<std::string> decoder_order;
  std::vector<double> snrs;
  std::string eval_set;
  for (std::size_t r = 0; r < run_dirs.size(); ++r) {
    const fs::path& dir = run_dirs[r];
    const auto mbytes = read_file(dir / "manifest.txt");
    const std::string mtext(mbytes.begin(), mbytes.end());
    const auto pos = mtext.find("eval_set = ");
    const std::string this_set = pos == std::string::npos ? "" : mtext.substr(pos + 11, 16);
    if (r == 0) {
      eval_set = this_set;
    } else if (this_set != eval_set) {
      throw ConfigError("mismatched eval sets: " + run_dirs[0].string() + " has " + eval_set + ", " + dir.string() +
                        " has " + this_set);
    }
    const auto bytes = read_file(dir / "eval.csv");
    const auto rows = parse_eval_csv(std::string(bytes.begin(), bytes.end()));
    if (rows.empty()) throw ConfigError(dir.string() + "/eval.csv has no rows");
    const std::string sched = rows.front().schedule;
    if (std::find(rep.schedules.begin(), rep.schedules.end(), sched) != rep.schedules.end()) {
      throw ConfigError("schedule '" + sched + "' appears in more than one run");
    }
    rep.schedules.push_back(sched);
    std::vector<double> run_snrs;
    for (const auto& row : rows) {
      if (std::find(run_snrs.begin(), run_snrs.end(), row.snr_db) == run_snrs.end()) run_snrs.push_back(row.snr_db);
      if (std::find(decoder_order.begin(), decoder_order.end(), row.decoder) == decoder_order.end()) {
        if (r > 0) throw ConfigError("decoder '" + row.decoder + "' only appears in " + dir.string());
        decoder_order.push_back(row.decoder);
      }
      auto& cell = cells[{row.decoder, row.snr_db}];
      if (cell.size() != r) throw ConfigError("duplicate or missing row for " + row.decoder + " in " + dir.string());
      cell.push_back({row.psnr_db, row.ms_ssim});
    }
    if (r == 0) {
      snrs = run_snrs;
    } else if (run_snrs != snrs) {
      throw ConfigError("mismatched eval SNR lists between " + run_dirs[0].string() + " and " + dir.string());
    }
  }
  const std::size_t s_count = rep.schedules.size();
  for (const auto& dec : decoder_order) {
    for (double snr : snrs) {
      const auto& cell = cells[{dec, snr}];
      if (cell.size() != s_count) throw ConfigError("decoder '" + dec + "' is missing from some runs");
      CompareRow row{dec, snr, {}, {}};
      for (const auto& c : cell) {
        row.psnr.push_back(c.first);
        row.ms_ssim.push_back(c.second);
      }
      rep.rows.push_back(std::move(row));
    }
  }
  for (double snr : snrs) {
    CompareRow mean{"mean", snr, std::vector<double>(s_count, 0.0), std::vector<double>(s_count, 0.0)};
    for (const auto& dec : decoder_order) {
      const auto& cell = cells[{dec, snr}];
      for (std::size_t s = 0; s < s_count; ++s) {
        mean.psnr[s] += cell[s].first / static_cast<double>(decoder_order.size());
        mean.ms_ssim[s] += cell[s].second / static_cast<double>(decoder_order.size());
      }
    }
    rep.rows.push_back(std::move(mean));
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  auto pivot = [&](bool use_psnr) {
    std::ostringstream os;
    os << "decoder,snr_db";
    for (const auto& s : rep.schedules) os << ',' << s;
    os << ",best\n";
    for (const auto& row : rep.rows) {
      const auto& vals = use_psnr ? row.psnr : row.ms_ssim;
      os << row.decoder << ',' << format_fixed(row.snr_db);
      std::size_t best = 0;
      for (std::size_t s = 0; s < vals.size(); ++s) {
        os << ',' << format_fixed(vals[s]);
        if (vals[s] > vals[best]) best = s;
      }
      os << ',' << rep.schedules[best] << '\n';
    }
    const std::string t = os.str();
    return std::vector<std::uint8_t>(t.begin(), t.end());
  };
  write_file(out_dir / "compare_psnr.csv", pivot(true));
  write_file(out_dir / "compare_ms_ssim.csv", pivot(false));
  std::vector<std::string> charted = decoder_order;
  charted.push_back("mean");
  for (const auto& dec : charted) {
    std::vector<Series> series;
    for (std::size_t s = 0; s < s_count; ++s) {
      Series ser{rep.schedules[s], {}, {}};
      for (const auto& row : rep.rows) {
        if (row.decoder != dec) continue;
        ser.x.push_back(row.snr_db);
        ser.y.push_back(row.psnr[s]);
      }
      series.push_back(std::move(ser));
    }
    const std::string svg = line_chart_svg("Schedules: " + dec, "SNR (dB)", "PSNR (dB)", series);
    write_file(out_dir / ("compare_" + dec + ".svg"), std::vector<std::uint8_t>(svg.begin(), svg.end()));
  }
  return rep;
}

}  // namespace djscc
