#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msct/adam.hpp"
#include "msct/data.hpp"
#include "msct/grad_check.hpp"
#include "msct/metrics.hpp"
#include "msct/model.hpp"

namespace msct {

/// Raised when training encounters a non-finite loss; carries the
/// offending optimizer step for the diagnostic.
class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(int step, const std::string& msg) : std::runtime_error(msg), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Everything one run needs; every field has a working default. Overlay
/// order is defaults, then preset, then config file, then CLI flags.
struct RunConfig {
  ModelConfig model;
  AdamConfig optim;
  SynthConfig synth;     // data source when no manifest is given
  std::string manifest;  // path to a dataset manifest; takes precedence
  int epochs = 200;
  int batch_size = 8;
  int max_steps = 0;  // 0 = no cap, otherwise stop after that many optimizer steps
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  int inject_nan_at_step = -1;  // test hook: poisons the loss at this 1-based step

  bool uses_manifest() const { return !manifest.empty(); }
  void validate() const;
};

/// Named baseline configs: "desk" trains in seconds at width 16, "paper"
/// mirrors the full-scale architecture (width 64, six blocks, 200 epochs).
void apply_preset(RunConfig& cfg, const std::string& name);

/// Overlays a JSON config file; keys absent from the file keep their
/// current values. Unknown keys are an error.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_json(RunConfig& cfg, const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);

/// Dataset named by the config: the manifest when set, otherwise the
/// synthetic generator.
DatasetSplit load_dataset(const RunConfig& cfg);

/// Split selection shared by eval and ablate: an explicit name, or the
/// first non-empty of test, val, train.
const std::vector<SampleRecord>& pick_eval_split(const DatasetSplit& ds, std::string& name);

struct EvalResult {
  int n = 0;
  double accuracy = 0.0;
  std::optional<double> auc;  // empty when only one class is present
  ConfusionByCategory confusion;
  double mean_loss = 0.0;  // combined objective, mean over samples
};

/// Full forward pass over a split with no gradient recording.
EvalResult evaluate(const Model& model, const std::vector<SampleRecord>& split, int batch_size,
                    const LossWeights& weights);

struct EpochStats {
  int epoch = 0;
  int steps_done = 0;       // optimizer steps completed when measured
  double mean_loss = 0.0;   // training loss, sample-weighted mean over the epoch
  double train_accuracy = 0.0;
  std::optional<double> train_auc;
  std::optional<double> val_accuracy;
  std::optional<double> val_auc;
};

struct TrainResult {
  RunConfig config;
  Model model;  // final weights
  std::vector<EpochStats> history;
  int steps_run = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_path;
};

/// Full training loop: per-epoch shuffled batches, forward, combined loss,
/// backward, Adam step. Writes metrics.jsonl plus final/best checkpoints
/// under cfg.out_dir ("best" is by validation AUC, falling back to the
/// final weights when there is no validation split).
TrainResult train(const RunConfig& cfg);

struct AblationRow {
  CrossVariant cross;
  SelfVariant self;
  std::string label;  // "CA+SA", "DCA+MSSA", ...
  std::string eval_split;
  EvalResult eval;
};

/// Trains and evaluates the four attention-slot combinations with the same
/// seed and data; each row equals an independent train+eval run.
std::vector<AblationRow> ablate(const RunConfig& base);

struct GradCheckCase {
  std::string family;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradCheckRun {
  double eps = 1e-5;
  int seeds = 0;
  double rtol = 1e-4;
  std::vector<GradCheckCase> cases;

  bool all_passed() const;
  const GradCheckCase* worst() const;
};

/// Gradient checks for every op family (primitives, the four attention
/// variants, the objectives) and the full two-block model, across `seeds`
/// seeds each. `inject_error` feeds the checker's fault-injection hook;
/// `threads` 0 picks a sensible worker count.
GradCheckRun gradcheck_all(int seeds, double eps, double inject_error = 0.0, int threads = 0);

}  // namespace msct
