#include "msct/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "config_json.hpp"
#include "msct/attention.hpp"
#include "msct/autograd.hpp"
#include "msct/checkpoint.hpp"
#include "msct/ops.hpp"

namespace msct {

namespace {

using nlohmann::json;

json optim_json(const AdamConfig& o) {
  return json{{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

void apply_optim(const json& j, AdamConfig& o) {
  detail::check_keys(j, {"lr", "beta1", "beta2", "eps"}, "optim");
  detail::get_if_present(j, "lr", o.lr);
  detail::get_if_present(j, "beta1", o.beta1);
  detail::get_if_present(j, "beta2", o.beta2);
  detail::get_if_present(j, "eps", o.eps);
}

json synth_json(const SynthConfig& s) {
  return json{{"n_per_category", s.n_per_category},
              {"n_val_per_category", s.n_val_per_category},
              {"n_test_per_category", s.n_test_per_category},
              {"T", s.T},
              {"C_a", s.C_a},
              {"C_v_feat", s.C_v_feat},
              {"d_latent", s.d_latent},
              {"smooth_window", s.smooth_window},
              {"noise_sigma", s.noise_sigma},
              {"seed", s.seed}};
}

void apply_synth(const json& j, SynthConfig& s) {
  detail::check_keys(j,
                     {"n_per_category", "n_val_per_category", "n_test_per_category", "T", "C_a",
                      "C_v_feat", "d_latent", "smooth_window", "noise_sigma", "seed"},
                     "synth");
  detail::get_if_present(j, "n_per_category", s.n_per_category);
  detail::get_if_present(j, "n_val_per_category", s.n_val_per_category);
  detail::get_if_present(j, "n_test_per_category", s.n_test_per_category);
  detail::get_if_present(j, "T", s.T);
  detail::get_if_present(j, "C_a", s.C_a);
  detail::get_if_present(j, "C_v_feat", s.C_v_feat);
  detail::get_if_present(j, "d_latent", s.d_latent);
  detail::get_if_present(j, "smooth_window", s.smooth_window);
  detail::get_if_present(j, "noise_sigma", s.noise_sigma);
  detail::get_if_present(j, "seed", s.seed);
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (epochs < 1) throw std::invalid_argument("run config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("run config: batch_size must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("run config: max_steps must be >= 0");
  if (optim.lr <= 0.0) throw std::invalid_argument("run config: lr must be positive");
  if (out_dir.empty()) throw std::invalid_argument("run config: output directory must be set");
  if (!uses_manifest()) synth.validate();
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg.model.C = 16;
    cfg.model.h = 4;
    cfg.model.n_blocks = 2;
    cfg.model.T = 8;
    cfg.model.C_a = 12;
    cfg.model.C_v_feat = 10;
    // The single-modality labels of the synthetic task are undecodable from
    // one stream by construction, so their cross-entropy terms would inject
    // pure label noise at this scale; the multimodal and alignment terms
    // carry all of the learnable signal.
    cfg.model.loss.ce_a = 0.0;
    cfg.model.loss.ce_v = 0.0;
    cfg.optim.lr = 1e-3;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.synth = SynthConfig{};  // 16 per category, dims matched to the model above
  } else if (name == "paper") {
    cfg.model.C = 64;
    cfg.model.h = 8;
    cfg.model.n_blocks = 6;
    cfg.model.T = 8;
    cfg.model.C_a = 104;
    cfg.model.C_v_feat = 32;
    cfg.optim.lr = 1e-3;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.synth = SynthConfig{};
    cfg.synth.n_per_category = 64;
    cfg.synth.C_a = 104;
    cfg.synth.C_v_feat = 32;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected 'desk' or 'paper')");
  }
}

void apply_config_json(RunConfig& cfg, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    detail::check_keys(j,
                       {"preset", "model", "optim", "data", "epochs", "batch_size", "max_steps",
                        "seed", "out", "inject_nan_at_step"},
                       "run config");
    // The preset applies first so the file's other keys overlay it.
    if (auto it = j.find("preset"); it != j.end()) apply_preset(cfg, it->get<std::string>());
    if (auto it = j.find("model"); it != j.end()) detail::apply_model_config(*it, cfg.model);
    if (auto it = j.find("optim"); it != j.end()) apply_optim(*it, cfg.optim);
    if (auto it = j.find("data"); it != j.end()) {
      detail::check_keys(*it, {"manifest", "synth"}, "data");
      if (it->contains("manifest") && it->contains("synth")) {
        throw std::invalid_argument("config: 'data' must set either 'manifest' or 'synth', not both");
      }
      if (it->contains("manifest")) cfg.manifest = it->at("manifest").get<std::string>();
      if (it->contains("synth")) {
        cfg.manifest.clear();
        apply_synth(it->at("synth"), cfg.synth);
      }
    }
    detail::get_if_present(j, "epochs", cfg.epochs);
    detail::get_if_present(j, "batch_size", cfg.batch_size);
    detail::get_if_present(j, "max_steps", cfg.max_steps);
    detail::get_if_present(j, "seed", cfg.seed);
    detail::get_if_present(j, "out", cfg.out_dir);
    detail::get_if_present(j, "inject_nan_at_step", cfg.inject_nan_at_step);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file not found: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_config_json(cfg, text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  const json data = cfg.uses_manifest() ? json{{"manifest", cfg.manifest}}
                                        : json{{"synth", synth_json(cfg.synth)}};
  const json j{{"model", detail::model_config_json(cfg.model)},
               {"optim", optim_json(cfg.optim)},
               {"data", data},
               {"epochs", cfg.epochs},
               {"batch_size", cfg.batch_size},
               {"max_steps", cfg.max_steps},
               {"seed", cfg.seed},
               {"out", cfg.out_dir},
               {"inject_nan_at_step", cfg.inject_nan_at_step}};
  return j.dump(2) + "\n";
}

DatasetSplit load_dataset(const RunConfig& cfg) {
  if (cfg.uses_manifest()) return load_manifest(cfg.manifest);
  return generate_dataset(cfg.synth);
}

const std::vector<SampleRecord>& pick_eval_split(const DatasetSplit& ds, std::string& name) {
  if (name.empty()) {
    if (!ds.test.empty()) name = "test";
    else if (!ds.val.empty()) name = "val";
    else name = "train";
  }
  const std::vector<SampleRecord>* split = nullptr;
  if (name == "train") split = &ds.train;
  else if (name == "val") split = &ds.val;
  else if (name == "test") split = &ds.test;
  else throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
  if (split->empty()) throw std::invalid_argument("split '" + name + "' is empty");
  return *split;
}

EvalResult evaluate(const Model& model, const std::vector<SampleRecord>& split, int batch_size,
                    const LossWeights& weights) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  const auto batches = batch_iter(split, batch_size, /*shuffle_seed=*/0);

  std::vector<int> preds, truth;
  std::vector<double> scores;
  std::vector<std::string> cats;
  double loss_sum = 0.0;
  for (const Batch& batch : batches) {
    const auto out = model.forward(batch.audio, batch.visual);
    const Tensor loss = total_loss(out.logits.a, out.logits.v, out.logits.m, out.Z_a.Z, out.Z_v.Z,
                                   batch.labels, weights);
    loss_sum += loss.scalar_value() * static_cast<double>(batch.labels.size());
    const auto p = predict_labels(out.logits.m);
    const auto s = real_probability(out.logits.m);
    for (size_t i = 0; i < batch.labels.size(); ++i) {
      preds.push_back(p[i]);
      scores.push_back(s[i]);
      truth.push_back(batch.labels[i].y_m);
      cats.push_back(to_string(batch.categories[i]));
    }
  }

  EvalResult r;
  r.n = static_cast<int>(split.size());
  r.accuracy = accuracy(preds, truth);
  const bool has_fake = std::find(truth.begin(), truth.end(), 0) != truth.end();
  const bool has_real = std::find(truth.begin(), truth.end(), 1) != truth.end();
  if (has_fake && has_real) r.auc = auc(scores, truth);
  r.confusion = confusion_by_category(cats, preds);
  r.mean_loss = loss_sum / static_cast<double>(split.size());
  return r;
}

namespace {

json eval_row(int epoch, int steps, const char* split, std::optional<double> train_loss,
              const EvalResult& ev) {
  return json{{"epoch", epoch},
              {"step", steps},
              {"split", split},
              {"loss", train_loss ? json(*train_loss) : json(ev.mean_loss)},
              {"eval_loss", ev.mean_loss},
              {"acc", ev.accuracy},
              {"auc", ev.auc ? json(*ev.auc) : json()}};
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  const DatasetSplit ds = load_dataset(cfg);
  if (ds.train.empty()) throw std::invalid_argument("training requires a non-empty train split");

  // The model's data dimensions must match the samples before any batch is
  // assembled, so mismatches fail with a config-level message.
  const SampleRecord& first = ds.train.front();
  if (first.audio.size(0) != cfg.model.T || first.audio.size(1) != cfg.model.C_a ||
      first.visual.size(1) != cfg.model.C_v_feat) {
    throw std::invalid_argument(
        "model dims (T=" + std::to_string(cfg.model.T) + ", C_a=" + std::to_string(cfg.model.C_a) +
        ", C_v_feat=" + std::to_string(cfg.model.C_v_feat) + ") do not match dataset sample '" +
        first.sample_id + "' (audio " + shape_to_string(first.audio.shape()) + ", visual " +
        shape_to_string(first.visual.shape()) + ")");
  }

  std::mt19937_64 rng(cfg.seed);
  Model model(cfg.model, rng);
  auto params = model.params();
  Adam opt(cfg.optim, params);

  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_out(out_dir / "config.json");
    cfg_out << run_config_to_json(cfg);
  }
  const auto metrics_path = out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot open metrics log: " + metrics_path.string());

  const auto final_path = out_dir / "final.ckpt";
  const auto best_path = out_dir / "best.ckpt";
  double best_val_auc = -std::numeric_limits<double>::infinity();
  bool best_saved = false;

  std::vector<EpochStats> history;
  int steps_done = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    // One deterministic shuffle stream per epoch, derived from the run seed.
    const std::uint64_t shuffle_seed =
        cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1);
    double loss_sum = 0.0;
    std::int64_t samples_seen = 0;
    for (const Batch& batch : batch_iter(ds.train, cfg.batch_size, shuffle_seed)) {
      const int step_number = steps_done + 1;
      GradTape tape;
      TapeScope scope(tape);
      const auto out = model.forward(batch.audio, batch.visual);
      const Tensor loss = total_loss(out.logits.a, out.logits.v, out.logits.m, out.Z_a.Z,
                                     out.Z_v.Z, batch.labels, cfg.model.loss);
      double loss_value = loss.scalar_value();
      if (cfg.inject_nan_at_step == step_number) {
        loss_value = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss_value)) {
        throw TrainAbort(step_number, "aborting: non-finite training loss at optimizer step " +
                                          std::to_string(step_number));
      }
      loss_sum += loss_value * static_cast<double>(batch.labels.size());
      samples_seen += static_cast<std::int64_t>(batch.labels.size());
      if (tape.needs_grad(loss)) {  // an all-zero weighting has no gradient path
        for (Tensor& p : params) p.zero_grad();
        tape.backward(loss);
        opt.step(params);
      }
      steps_done = step_number;
      if (cfg.max_steps > 0 && steps_done >= cfg.max_steps) {
        stop = true;
        break;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.steps_done = steps_done;
    stats.mean_loss = loss_sum / static_cast<double>(samples_seen);
    const EvalResult on_train = evaluate(model, ds.train, cfg.batch_size, cfg.model.loss);
    stats.train_accuracy = on_train.accuracy;
    stats.train_auc = on_train.auc;
    metrics << eval_row(epoch, steps_done, "train", stats.mean_loss, on_train).dump() << '\n';
    if (!ds.val.empty()) {
      const EvalResult on_val = evaluate(model, ds.val, cfg.batch_size, cfg.model.loss);
      stats.val_accuracy = on_val.accuracy;
      stats.val_auc = on_val.auc;
      metrics << eval_row(epoch, steps_done, "val", std::nullopt, on_val).dump() << '\n';
      if (on_val.auc && *on_val.auc > best_val_auc) {
        best_val_auc = *on_val.auc;
        save_checkpoint(best_path, model);
        best_saved = true;
      }
    }
    history.push_back(std::move(stats));
  }
  metrics.flush();
  if (!metrics) throw std::runtime_error("metrics log write failed: " + metrics_path.string());

  save_checkpoint(final_path, model);
  if (!best_saved) {
    // No validation split (or no usable AUC): the final weights stand in.
    std::filesystem::copy_file(final_path, best_path,
                               std::filesystem::copy_options::overwrite_existing);
  }

  return TrainResult{cfg,        std::move(model), std::move(history), steps_done,
                     final_path, best_path,        metrics_path};
}

std::vector<AblationRow> ablate(const RunConfig& base) {
  static constexpr std::pair<CrossVariant, SelfVariant> kVariants[4] = {
      {CrossVariant::CA, SelfVariant::SA},
      {CrossVariant::CA, SelfVariant::MSSA},
      {CrossVariant::DCA, SelfVariant::SA},
      {CrossVariant::DCA, SelfVariant::MSSA}};

  std::vector<AblationRow> rows;
  for (const auto& [cross, self] : kVariants) {
    RunConfig cfg = base;
    cfg.model.cross_variant = cross;
    cfg.model.self_variant = self;
    const std::string tag = std::string(to_string(cross)) + "_" + to_string(self);
    cfg.out_dir = (std::filesystem::path(base.out_dir) / tag).string();

    TrainResult result = train(cfg);
    const DatasetSplit ds = load_dataset(cfg);
    std::string split_name;
    const auto& records = pick_eval_split(ds, split_name);

    AblationRow row{cross, self, upper(to_string(cross)) + "+" + upper(to_string(self)),
                    split_name,
                    evaluate(result.model, records, cfg.batch_size, cfg.model.loss)};
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient-check families

namespace {

/// Fixed-probe scalarization: sum(op_output * probe) exercises every output
/// component with distinct weights.
Tensor probe_sum(const Tensor& out, const Tensor& probe) { return sum_all(mul(out, probe)); }

struct AttentionSetup {
  AttentionConfig cfg;
  AttentionWeights w;
  Tensor x, x_other, probe;
  std::vector<NamedParam> params;
};

AttentionSetup make_attention_setup(std::uint64_t seed, bool with_cross, bool with_conv,
                                    bool two_inputs) {
  AttentionSetup s;
  s.cfg.C = 16;
  s.cfg.h = 4;
  std::mt19937_64 rng(seed);
  s.w = make_attention_weights(s.cfg, rng, with_cross, with_conv, 0.2);
  if (with_conv) {
    // Delta kernels have zero off-center taps; jitter them so the conv
    // gradient is exercised away from the identity point.
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Tensor& bank : s.w.conv_kernels) {
      for (double& v : bank.mutable_values()) v += 0.3 * gauss(rng);
    }
  }
  s.x = Tensor::randn({1, 4, 16}, rng, 0.5);
  s.x.set_requires_grad();
  s.params.push_back({"x", s.x});
  if (two_inputs) {
    s.x_other = Tensor::randn({1, 4, 16}, rng, 0.5);
    s.x_other.set_requires_grad();
    s.params.push_back({"x_other", s.x_other});
  }
  append_attention_params(s.w, "slot", s.params);
  s.probe = Tensor::randn({1, 4, 16}, rng);
  return s;
}

struct Family {
  std::string name;
  std::function<GradCheckReport(std::uint64_t, const GradCheckOptions&)> run;
};

std::vector<Family> make_families() {
  std::vector<Family> fams;

  fams.push_back({"matmul", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor a = Tensor::randn({2, 3, 4}, rng);
                    Tensor b = Tensor::randn({4, 5}, rng);
                    a.set_requires_grad();
                    b.set_requires_grad();
                    const Tensor probe = Tensor::randn({2, 3, 5}, rng);
                    auto f = [&] { return probe_sum(matmul(a, b), probe); };
                    return grad_check(f, {{"a", a}, {"b", b}}, o);
                  }});

  fams.push_back({"softmax_rows", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor x = Tensor::randn({3, 6}, rng);
                    x.set_requires_grad();
                    const Tensor probe = Tensor::randn({3, 6}, rng);
                    auto f = [&] { return probe_sum(softmax_rows(x, 0.7), probe); };
                    return grad_check(f, {{"x", x}}, o);
                  }});

  fams.push_back({"depthwise_conv2d", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor x = Tensor::randn({2, 4, 5, 6}, rng);
                    Tensor k = Tensor::randn({4, 3, 3}, rng, 0.4);
                    x.set_requires_grad();
                    k.set_requires_grad();
                    const Tensor probe = Tensor::randn({2, 4, 5, 6}, rng);
                    auto f = [&] { return probe_sum(depthwise_conv2d(x, k), probe); };
                    return grad_check(f, {{"x", x}, {"kernels", k}}, o);
                  }});

  fams.push_back({"layer_norm", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor x = Tensor::randn({2, 3, 8}, rng);
                    Tensor gamma = Tensor::randn({8}, rng, 0.3, 1.0);
                    Tensor beta = Tensor::randn({8}, rng, 0.3);
                    x.set_requires_grad();
                    gamma.set_requires_grad();
                    beta.set_requires_grad();
                    const Tensor probe = Tensor::randn({2, 3, 8}, rng);
                    auto f = [&] { return probe_sum(layer_norm(x, gamma, beta), probe); };
                    return grad_check(f, {{"x", x}, {"gamma", gamma}, {"beta", beta}}, o);
                  }});

  fams.push_back({"mha_self", [](std::uint64_t seed, const GradCheckOptions& o) {
                    auto s = make_attention_setup(seed, false, false, false);
                    auto f = [&] { return probe_sum(mha_self(s.x, s.w, s.cfg), s.probe); };
                    return grad_check(f, s.params, o);
                  }});

  fams.push_back({"mha_cross", [](std::uint64_t seed, const GradCheckOptions& o) {
                    auto s = make_attention_setup(seed, false, false, true);
                    auto f = [&] {
                      return probe_sum(mha_cross(s.x, s.x_other, s.w, s.cfg), s.probe);
                    };
                    return grad_check(f, s.params, o);
                  }});

  fams.push_back({"mssa", [](std::uint64_t seed, const GradCheckOptions& o) {
                    auto s = make_attention_setup(seed, false, true, false);
                    auto f = [&] { return probe_sum(mssa(s.x, s.w, s.cfg), s.probe); };
                    return grad_check(f, s.params, o);
                  }});

  fams.push_back({"dca", [](std::uint64_t seed, const GradCheckOptions& o) {
                    auto s = make_attention_setup(seed, true, false, true);
                    auto f = [&] {
                      return probe_sum(dca(s.x, s.x_other, s.w, s.cfg), s.probe);
                    };
                    return grad_check(f, s.params, o);
                  }});

  fams.push_back({"cross_entropy", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor logits = Tensor::randn({5, 2}, rng, 1.5);
                    logits.set_requires_grad();
                    const std::vector<int> labels{0, 1, 1, 0, 1};
                    auto f = [&] { return cross_entropy(logits, labels); };
                    return grad_check(f, {{"logits", logits}}, o);
                  }});

  fams.push_back({"alignment_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor za = Tensor::randn({3, 5, 6}, rng);
                    Tensor zv = Tensor::randn({3, 5, 6}, rng);
                    za.set_requires_grad();
                    zv.set_requires_grad();
                    const std::vector<int> y{1, 0, 1};
                    auto f = [&] { return alignment_loss(za, zv, y); };
                    return grad_check(f, {{"Z_a", za}, {"Z_v", zv}}, o);
                  }});

  fams.push_back({"total_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                    std::mt19937_64 rng(seed);
                    Tensor la = Tensor::randn({4, 2}, rng, 1.2);
                    Tensor lv = Tensor::randn({4, 2}, rng, 1.2);
                    Tensor lm = Tensor::randn({4, 2}, rng, 1.2);
                    Tensor za = Tensor::randn({4, 5, 6}, rng);
                    Tensor zv = Tensor::randn({4, 5, 6}, rng);
                    for (Tensor* t : {&la, &lv, &lm, &za, &zv}) t->set_requires_grad();
                    const std::vector<LabelTriple> labels{{1, 1, 1}, {0, 1, 0}, {1, 0, 0}, {0, 0, 0}};
                    LossWeights w;
                    w.ce_a = 0.7;
                    w.ce_v = 1.3;
                    w.ce_av = 2.0;
                    w.c = 0.9;
                    auto f = [&] { return total_loss(la, lv, lm, za, zv, labels, w); };
                    return grad_check(
                        f, {{"logits_a", la}, {"logits_v", lv}, {"logits_m", lm}, {"Z_a", za}, {"Z_v", zv}},
                        o);
                  }});

  fams.push_back({"full_model", [](std::uint64_t seed, const GradCheckOptions& o) {
                    ModelConfig mc;
                    mc.C = 16;
                    mc.h = 4;
                    mc.n_blocks = 2;
                    mc.T = 4;
                    mc.C_a = 6;
                    mc.C_v_feat = 5;
                    std::mt19937_64 rng(seed);
                    Model model(mc, rng);
                    const Tensor x_a = Tensor::randn({2, mc.C_a, mc.T}, rng);
                    const Tensor v = Tensor::randn({2, mc.T, mc.C_v_feat}, rng);
                    const std::vector<LabelTriple> labels{{1, 1, 1}, {0, 0, 0}};
                    auto f = [&] {
                      const auto out = model.forward(x_a, v);
                      return total_loss(out.logits.a, out.logits.v, out.logits.m, out.Z_a.Z,
                                        out.Z_v.Z, labels, mc.loss);
                    };
                    return grad_check(f, model.named_params(), o);
                  }});

  return fams;
}

}  // namespace

bool GradCheckRun::all_passed() const {
  return std::all_of(cases.begin(), cases.end(),
                     [&](const GradCheckCase& c) { return c.report.passes(rtol); });
}

const GradCheckCase* GradCheckRun::worst() const {
  const GradCheckCase* w = nullptr;
  for (const auto& c : cases) {
    if (!w || c.report.max_rel_err > w->report.max_rel_err) w = &c;
  }
  return w;
}

GradCheckRun gradcheck_all(int seeds, double eps, double inject_error, int threads) {
  if (seeds < 1) throw std::invalid_argument("gradcheck: seeds must be >= 1");
  const auto families = make_families();

  GradCheckOptions opts;
  opts.eps = eps;
  opts.inject_error = inject_error;

  struct Job {
    size_t family;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (size_t f = 0; f < families.size(); ++f) {
    for (int s = 0; s < seeds; ++s) jobs.push_back({f, static_cast<std::uint64_t>(s + 1)});
  }
  // Long jobs first so the pool does not serialize on a full-model check at
  // the tail; the result order stays family-major.
  std::vector<size_t> exec_order(jobs.size());
  for (size_t i = 0; i < jobs.size(); ++i) exec_order[i] = i;
  std::stable_partition(exec_order.begin(), exec_order.end(), [&](size_t i) {
    return families[jobs[i].family].name == "full_model";
  });

  std::vector<GradCheckCase> results(jobs.size());
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t slot = next.fetch_add(1);
      if (slot >= exec_order.size()) return;
      const size_t i = exec_order[slot];
      const Job& job = jobs[i];
      try {
        results[i] =
            GradCheckCase{families[job.family].name, job.seed, families[job.family].run(job.seed, opts)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  int n_threads = threads;
  if (n_threads <= 0) {
    n_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }
  n_threads = std::min<int>(n_threads, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  GradCheckRun run;
  run.eps = eps;
  run.seeds = seeds;
  run.cases = std::move(results);
  return run;
}

}  // namespace msct
