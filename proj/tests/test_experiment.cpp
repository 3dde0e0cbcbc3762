#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "djscc/error.hpp"
#include "djscc/experiment.hpp"

using namespace djscc;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("djscc_exp_" + std::to_string(getpid())) / name;
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const fs::path& dir, Schedule s) {
  ExperimentConfig cfg;
  cfg.train.schedule = s;
  cfg.train.batch_size = 8;
  cfg.train.epochs_stage1 = 1;
  cfg.train.epochs_per_decoder = 1;
  cfg.train.iterative_cycles = 2;
  cfg.train.simultaneous_epochs = 1;
  cfg.train.seed = 3;
  cfg.widths = {4, 6};
  cfg.patch_size = 16;
  cfg.train_count = 16;
  cfg.eval_count = 4;
  cfg.output_dir = dir.string();
  return cfg;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("config text round trips") {
  ExperimentConfig cfg;
  cfg.train.lr = 1.2345678901234e-3;
  cfg.train.snr_set_db = {0.5, 2, 17.25};
  cfg.roster = {DecoderVariant::VGG, DecoderVariant::Conv};
  cfg.widths = {16, 32};
  cfg.train.rate = {1, 12};
  const std::string text = format_config(cfg);
  const ExperimentConfig back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.train.lr == cfg.train.lr);
  CHECK(back.roster == cfg.roster);
  CHECK(config_keys().size() == count(text, " = "));
  for (const auto& key : config_keys()) CHECK(get_config_value(back, key) == get_config_value(cfg, key));

  apply_override(cfg, "train.batch_size=16");
  CHECK(cfg.train.batch_size == 16);
  apply_override(cfg, "eval.snrs = 1, 13");
  CHECK(cfg.eval_snrs == std::vector<double>{1, 13});
  CHECK_THROWS_AS(apply_override(cfg, "train.bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.lr"), ConfigError);
  CHECK(parse_config("[train]\nlr = 0.001 # comment\n\n[manifest]\nloss.csv = 0123\n").train.lr == 0.001);
}

TEST_CASE("config errors are listed all at once") {
  const std::string text = "[train]\nlr = fast\nbatch_size = -3\nmystery = 1\n[model]\nroster = conv,conv\n"
                           "[data]\npatch_size = 30\n";
  try {
    parse_config(text, "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.cfg:2") != std::string::npos);
    CHECK(msg.find("bad.cfg:3") != std::string::npos);
    CHECK(msg.find("mystery") != std::string::npos);
    CHECK(msg.find("twice") != std::string::npos);
    CHECK(msg.find("patch_size") != std::string::npos);
  }
  ExperimentConfig cfg;
  cfg.roster.clear();
  CHECK(cfg.problems().size() == 1);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("output root from the environment") {
  ::setenv("DJSCC_OUTPUT_ROOT", "/tmp/root_x", 1);
  CHECK(resolve_output_dir("run") == fs::path("/tmp/root_x/run"));
  CHECK(resolve_output_dir("/abs/run") == fs::path("/abs/run"));
  ::unsetenv("DJSCC_OUTPUT_ROOT");
  CHECK(resolve_output_dir("run") == fs::path("run"));
}

TEST_CASE("eval csv round trips losslessly") {
  std::vector<EvalRecord> rows{{"two_stage", "attention", "rayleigh", 1, 26.078, 0.8852, 0, "final"},
                               {"iterative", "vgg", "awgn", 13, 31.123456, 0.999999, 12, "After-3"}};
  const std::string text = eval_csv(rows);
  CHECK(text.rfind(std::string(kEvalCsvHeader) + "\n", 0) == 0);
  CHECK(text.find("two_stage,attention,rayleigh,1.000000,26.078000,0.885200,0,final") != std::string::npos);
  const auto back = parse_eval_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(eval_csv(back) == text);
  CHECK(back[1].snapshot == "After-3");
  CHECK(back[1].psnr_db == 31.123456);
  CHECK(format_fixed(-0.0000001) == "0.000000");
  CHECK_THROWS_AS(parse_eval_csv("a,b\n"), ConfigError);
  CHECK_THROWS_AS(parse_eval_csv(std::string(kEvalCsvHeader) + "\nx,y,z,1,2\n"), ConfigError);
}

TEST_CASE("line chart svg") {
  std::vector<Series> s;
  for (int k = 0; k < 4; ++k) s.push_back({"s" + std::to_string(k), {1, 4, 7}, {10.0 + k, 11.0 + k, 12.0 + k}});
  const std::string svg = line_chart_svg("t <x>", "SNR", "PSNR", s);
  CHECK(count(svg, "<polyline") == 4);
  CHECK(svg.find("t &lt;x&gt;") != std::string::npos);
  CHECK(svg == line_chart_svg("t <x>", "SNR", "PSNR", s));
  s[0].y.pop_back();
  CHECK_THROWS_AS(line_chart_svg("t", "x", "y", s), ShapeError);
}

TEST_CASE("train and eval a two-stage run") {
  const fs::path dir = scratch("two");
  const fs::path out = cmd_train(tiny(dir, Schedule::TwoStage));
  CHECK(out == dir);
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(dir / "checkpoints")) ckpts += e.path().extension() == ".ckpt";
  CHECK(ckpts == 6);
  const auto manifest = read_manifest(dir);
  CHECK(manifest.size() == 7);
  for (const auto& m : manifest) CHECK(fnv1a(read_file(dir / m.file)) == m.checksum);

  const auto rows = cmd_eval(dir);
  CHECK(rows.size() == 20);
  CHECK(parse_eval_csv(slurp(dir / "eval.csv")).size() == 20);
  CHECK(fs::exists(dir / "samples" / "original_0.png"));
  CHECK(fs::exists(dir / "samples" / "vgg_snr13_0.png"));
  const auto rayleigh = cmd_eval(dir, {"eval.channel=rayleigh", "eval.snrs=1,13"});
  CHECK(rayleigh.size() == 8);
  CHECK(rayleigh.front().channel == "rayleigh");
  CHECK_THROWS_AS(cmd_eval(dir, {"train.lr=1"}), ConfigError);

  // Rerun from the manifest: identical bytes.
  ExperimentConfig again = load_config(dir / "manifest.txt");
  again.output_dir = scratch("two_again").string();
  cmd_train(again);
  for (const auto& m : manifest) CHECK(read_file(dir / m.file) == read_file(again.output_dir / fs::path(m.file)));

  CHECK_THROWS_AS(cmd_forgetting(dir), ConfigError);
}

TEST_CASE("iterative run, forgetting report and compare") {
  const fs::path iter = scratch("iter");
  cmd_train(tiny(iter, Schedule::Iterative));
  for (std::size_t t = 0; t < 8; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "t%03zu_encoder.ckpt", t);
    CHECK(fs::exists(iter / "snapshots" / name));
  }
  const auto rep = cmd_forgetting(iter);
  CHECK(rep.entries.size() == 16);
  const auto rows = parse_eval_csv(slurp(iter / "forgetting.csv"));
  CHECK(rows.size() == 80);
  for (const auto& dec : rep.decoders) CHECK(count(slurp(iter / ("forgetting_" + dec + ".svg")), "<polyline") == 4);

  const fs::path two = scratch("two_c"), sim = scratch("sim_c");
  cmd_train(tiny(two, Schedule::TwoStage));
  cmd_train(tiny(sim, Schedule::Simultaneous));
  for (const auto& d : {iter, two, sim}) cmd_eval(d);
  const fs::path out = scratch("cmp");
  const auto cmp = cmd_compare({two, iter, sim}, out);
  CHECK(cmp.schedules == std::vector<std::string>{"two_stage", "iterative", "simultaneous"});
  CHECK(cmp.rows.size() == 25);
  const std::string csv = slurp(out / "compare_psnr.csv");
  CHECK(csv.rfind("decoder,snr_db,two_stage,iterative,simultaneous,best\n", 0) == 0);
  for (const auto& row : cmp.rows) {
    const auto best = std::max_element(row.psnr.begin(), row.psnr.end()) - row.psnr.begin();
    std::string line = row.decoder + "," + format_fixed(row.snr_db);
    for (double v : row.psnr) line += "," + format_fixed(v);
    line += "," + cmp.schedules[best] + "\n";
    CHECK(csv.find(line) != std::string::npos);
  }
  CHECK(count(slurp(out / "compare_mean.svg"), "<polyline") == 3);
  const fs::path out2 = scratch("cmp2");
  cmd_compare({two, iter, sim}, out2);
  CHECK(slurp(out / "compare_psnr.csv") == slurp(out2 / "compare_psnr.csv"));

  CHECK_THROWS_AS(cmd_compare({two, two}, scratch("dup")), ConfigError);
  ExperimentConfig other = tiny(scratch("other"), Schedule::Simultaneous);
  other.eval_data_seed = 99;
  cmd_train(other);
  cmd_eval(other.output_dir);
  CHECK_THROWS_AS(cmd_compare({two, other.output_dir}, scratch("mismatch")), ConfigError);
}

TEST_CASE("a diverging run keeps last finite checkpoints") {
  const fs::path dir = scratch("diverge");
  ExperimentConfig cfg = tiny(dir, Schedule::Simultaneous);
  cfg.train.lr = 1e300;
  cfg.train.simultaneous_epochs = 4;
  CHECK_THROWS_AS(cmd_train(cfg), NumericError);
  CHECK(fs::exists(dir / "last_good" / "encoder.ckpt"));
  for (const auto v : cfg.roster) CHECK(fs::exists(dir / "last_good" / (to_string(v) + ".ckpt")));
  for (const auto& e : fs::directory_iterator(dir / "last_good")) {
    const Model m = load_checkpoint(e.path());
    for (const auto& p : m.params.items()) {
      for (double x : p.tensor.data()) CHECK(std::isfinite(x));
    }
  }
}
