// End-to-end checks of the msct binary: every subcommand is run through
// std::system with captured stdout/stderr and inspected exit codes.
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("msct_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

size_t line_count(const std::string& text) {
  size_t n = 0;
  for (char ch : text) n += (ch == '\n');
  return n;
}

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args) {
  static const fs::path scratch = temp_dir("cli_io");
  const fs::path out_file = scratch / "stdout.txt";
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = std::string(MSCT_CLI_PATH) + " " + args + " > " + out_file.string() +
                          " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// Small enough that a training run finishes in a fraction of a second.
const char* kTinyConfig = R"({
  "model": {"C": 8, "h": 4, "n_blocks": 1, "T": 4, "C_a": 6, "C_v_feat": 5, "ffn_multiplier": 2},
  "data": {"synth": {"n_per_category": 2, "n_val_per_category": 2, "n_test_per_category": 2,
                     "T": 4, "C_a": 6, "C_v_feat": 5, "seed": 5}},
  "epochs": 2,
  "batch_size": 8,
  "seed": 3
})";

fs::path write_tiny_config(const fs::path& dir, const std::string& extra = "") {
  std::string text = kTinyConfig;
  if (!extra.empty()) {
    const auto pos = text.rfind('}');
    text = text.substr(0, pos) + ",\n  " + extra + "\n}";
  }
  const auto path = dir / "config.json";
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 2 and help with 0") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("make-tea").exit_code == 2);

  const CliResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("train") != std::string::npos);
  CHECK(help.out.find("gradcheck") != std::string::npos);

  CHECK(run_cli("gen-data --out somewhere --n 0").exit_code == 2);
  CHECK(run_cli("gen-data --n 4").exit_code == 2);              // --out is required
  CHECK(run_cli("train --frobnicate").exit_code == 2);
  CHECK(run_cli("train --preset atlas").exit_code == 2);
  CHECK(run_cli("eval").exit_code == 2);                        // --checkpoint is required
}

TEST_CASE("gen-data writes a reproducible dataset") {
  const auto dir_a = temp_dir("cli_gen_a");
  const auto dir_b = temp_dir("cli_gen_b");
  const std::string args = "--n 2 --n-val 1 --n-test 2 --seed 9 --frames 4 --c-a 6 --c-v 5 --out ";

  const CliResult a = run_cli("gen-data " + args + dir_a.string());
  REQUIRE(a.exit_code == 0);
  CHECK(a.out.find("wrote") != std::string::npos);
  CHECK(a.out.find("train: 8 samples") != std::string::npos);
  CHECK(a.out.find("val: 4 samples") != std::string::npos);
  CHECK(a.out.find("test: 8 samples") != std::string::npos);

  const CliResult b = run_cli("gen-data " + args + dir_b.string());
  REQUIRE(b.exit_code == 0);

  const std::string manifest_a = slurp(dir_a / "manifest.csv");
  CHECK(manifest_a == slurp(dir_b / "manifest.csv"));
  CHECK(line_count(manifest_a) == 1 + 8 + 4 + 8);  // header plus one row per sample

  // The referenced feature files are byte-identical across runs too.
  std::istringstream rows(manifest_a);
  std::string header, first_row;
  std::getline(rows, header);
  CHECK(header == "sample_id,category,split,audio_path,visual_path");
  std::getline(rows, first_row);
  const auto audio_rel = [&] {
    std::istringstream cells(first_row);
    std::string cell;
    for (int i = 0; i < 4; ++i) std::getline(cells, cell, ',');
    return cell;
  }();
  REQUIRE_FALSE(audio_rel.empty());
  CHECK(slurp(dir_a / audio_rel) == slurp(dir_b / audio_rel));
}

TEST_CASE("train runs end to end and is deterministic") {
  const auto dir = temp_dir("cli_train");
  const auto cfg = write_tiny_config(dir);
  const auto out_a = dir / "a", out_b = dir / "b", out_c = dir / "c";

  const CliResult a =
      run_cli("train --config " + cfg.string() + " --out " + out_a.string());
  REQUIRE(a.exit_code == 0);
  CHECK(a.out.find("trained 2 steps over 2 epochs") != std::string::npos);
  CHECK(a.out.find("final train ACC=") != std::string::npos);
  CHECK(a.out.find("val ACC=") != std::string::npos);
  CHECK(fs::exists(out_a / "final.ckpt"));
  CHECK(fs::exists(out_a / "best.ckpt"));
  CHECK(fs::exists(out_a / "metrics.jsonl"));
  CHECK(fs::exists(out_a / "config.json"));

  const CliResult b =
      run_cli("train --config " + cfg.string() + " --out " + out_b.string());
  REQUIRE(b.exit_code == 0);
  CHECK(slurp(out_a / "metrics.jsonl") == slurp(out_b / "metrics.jsonl"));
  CHECK(slurp(out_a / "final.ckpt") == slurp(out_b / "final.ckpt"));

  // A flag overrides the same key from the config file.
  const CliResult c = run_cli("train --config " + cfg.string() + " --seed 4 --out " +
                              out_c.string());
  REQUIRE(c.exit_code == 0);
  CHECK(slurp(out_a / "final.ckpt") != slurp(out_c / "final.ckpt"));
}

TEST_CASE("eval reports a split and writes a stable json report") {
  const auto dir = temp_dir("cli_eval");
  const auto cfg = write_tiny_config(dir);
  const auto run_dir = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run_dir.string()).exit_code == 0);
  const std::string ckpt = (run_dir / "final.ckpt").string();

  const CliResult e1 = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt +
                               " --out " + (dir / "e1").string());
  REQUIRE(e1.exit_code == 0);
  CHECK(e1.out.find("split test: n=8") != std::string::npos);
  CHECK(e1.out.find("AUC=") != std::string::npos);
  CHECK(fs::exists(dir / "e1" / "eval-test.json"));

  const CliResult e2 = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt +
                               " --out " + (dir / "e2").string());
  REQUIRE(e2.exit_code == 0);
  CHECK(slurp(dir / "e1" / "eval-test.json") == slurp(dir / "e2" / "eval-test.json"));

  const CliResult val = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt +
                                " --split val --out " + (dir / "e3").string());
  REQUIRE(val.exit_code == 0);
  CHECK(val.out.find("split val: n=8") != std::string::npos);

  const CliResult missing = run_cli("eval --config " + cfg.string() +
                                    " --checkpoint no/such/model.ckpt --out " +
                                    (dir / "e4").string());
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("not found") != std::string::npos);
  CHECK(missing.err.find("no/such/model.ckpt") != std::string::npos);
}

TEST_CASE("export-embeddings writes one row per sample and re-exports identically") {
  const auto dir = temp_dir("cli_export");
  const auto cfg = write_tiny_config(dir);
  const auto run_dir = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run_dir.string()).exit_code == 0);
  const std::string ckpt = (run_dir / "final.ckpt").string();

  const CliResult x1 = run_cli("export-embeddings --config " + cfg.string() + " --checkpoint " +
                               ckpt + " --out " + (dir / "x1").string());
  REQUIRE(x1.exit_code == 0);
  CHECK(x1.out.find("wrote 24 rows") != std::string::npos);

  const std::string csv = slurp(dir / "x1" / "embeddings.csv");
  CHECK(line_count(csv) == 25);  // header plus 8 train, 8 val, 8 test samples

  // Column count is two id columns plus one per embedding channel and branch.
  std::istringstream rows(csv);
  std::string header;
  std::getline(rows, header);
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == 2 + 2 * 8);
  CHECK(header.rfind("sample_id,category,z_a_0", 0) == 0);

  const CliResult x2 = run_cli("export-embeddings --config " + cfg.string() + " --checkpoint " +
                               ckpt + " --out " + (dir / "x2").string());
  REQUIRE(x2.exit_code == 0);
  CHECK(csv == slurp(dir / "x2" / "embeddings.csv"));

  const CliResult test_only = run_cli("export-embeddings --config " + cfg.string() +
                                      " --checkpoint " + ckpt + " --split test --out " +
                                      (dir / "x3").string());
  REQUIRE(test_only.exit_code == 0);
  CHECK(line_count(slurp(dir / "x3" / "embeddings.csv")) == 9);
}

TEST_CASE("a poisoned training loss aborts with exit code 1") {
  const auto dir = temp_dir("cli_nan");
  const auto cfg = write_tiny_config(dir, R"("inject_nan_at_step": 1)");
  const CliResult r =
      run_cli("train --config " + cfg.string() + " --out " + (dir / "run").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("non-finite training loss at optimizer step 1") != std::string::npos);
}

TEST_CASE("ablate prints four deterministic rows") {
  const auto dir = temp_dir("cli_ablate");
  const auto cfg = write_tiny_config(dir);

  const CliResult a =
      run_cli("ablate --config " + cfg.string() + " --out " + (dir / "a").string());
  REQUIRE(a.exit_code == 0);
  for (const char* label : {"CA+SA", "CA+MSSA", "DCA+SA", "DCA+MSSA"}) {
    CHECK(a.out.find(label) != std::string::npos);
  }

  const std::string csv = slurp(dir / "a" / "ablation.csv");
  CHECK(line_count(csv) == 5);
  CHECK(csv.rfind("config,split,n,acc,auc", 0) == 0);

  const CliResult b =
      run_cli("ablate --config " + cfg.string() + " --out " + (dir / "b").string());
  REQUIRE(b.exit_code == 0);
  CHECK(csv == slurp(dir / "b" / "ablation.csv"));
}

TEST_CASE("gradcheck reports every family and honors its flags") {
  const CliResult r = run_cli("gradcheck --seeds 1 --eps 1e-5");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("eps=1e-05, seeds=1") != std::string::npos);
  for (const char* fam : {"matmul", "softmax_rows", "depthwise_conv2d", "layer_norm", "mha_self",
                          "mha_cross", "mssa", "dca", "cross_entropy", "alignment_loss",
                          "total_loss", "full_model"}) {
    CHECK(r.out.find(fam) != std::string::npos);
  }
  CHECK(r.out.find("all 12 checks passed") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("unknown config keys are a config error") {
  const auto dir = temp_dir("cli_badcfg");
  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"modle": {"C": 8}})";
  const CliResult r =
      run_cli("train --config " + bad.string() + " --out " + (dir / "run").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("unknown") != std::string::npos);
}
