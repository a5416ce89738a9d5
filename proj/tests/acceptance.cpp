// Acceptance gate: one check per release criterion, each printed as a
// single PASS/FAIL line. Any failure makes the process exit nonzero.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "msct/attention.hpp"
#include "msct/checkpoint.hpp"
#include "msct/data.hpp"
#include "msct/metrics.hpp"
#include "msct/model.hpp"
#include "msct/objectives.hpp"
#include "msct/runner.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace msct;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  [" << idx << "] " << name;
  if (!detail.empty()) std::cout << " -- " << detail;
  std::cout << std::endl;
  if (!ok) ++g_failures;
}

template <typename F>
void criterion(int idx, const std::string& name, F&& body) {
  try {
    std::string detail;
    const bool ok = body(detail);
    report(idx, name, ok, detail);
  } catch (const std::exception& e) {
    report(idx, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

fs::path scratch_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("msct_acceptance_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A run small enough for repeated full train+eval pipelines.
RunConfig tiny_run(const fs::path& out) {
  RunConfig cfg;
  cfg.model.C = 8;
  cfg.model.h = 4;
  cfg.model.n_blocks = 1;
  cfg.model.T = 4;
  cfg.model.C_a = 6;
  cfg.model.C_v_feat = 5;
  cfg.model.ffn_multiplier = 2;
  cfg.synth.T = 4;
  cfg.synth.C_a = 6;
  cfg.synth.C_v_feat = 5;
  cfg.synth.n_per_category = 4;
  cfg.synth.n_test_per_category = 4;
  cfg.synth.seed = 19;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 11;
  cfg.out_dir = out.string();
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients agree with central differences everywhere.

bool criterion_gradients(std::string& detail) {
  const GradCheckRun run = gradcheck_all(/*seeds=*/10, /*eps=*/1e-5);
  const GradCheckCase* worst = run.worst();
  std::ostringstream os;
  os << run.cases.size() << " checks, worst " << worst->family << "/"
     << worst->report.worst_param << " rel err " << fmt(worst->report.max_rel_err, 3)
     << " (tol " << fmt(run.rtol, 3) << ")";
  detail = os.str();
  return run.all_passed() && run.cases.size() == 120;
}

// ---------------------------------------------------------------------------
// 2. The attention variants degenerate to their plain forms exactly.

bool criterion_attention_degeneracies(std::string& detail) {
  AttentionConfig cfg;
  cfg.C = 16;
  cfg.h = 4;
  double worst_delta = 0.0, worst_rowsum = 0.0, worst_tied = 0.0, worst_cross = 0.0;

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);

    // Fresh multi-scale banks are delta kernels: identical to plain self-attention.
    auto w_conv = make_attention_weights(cfg, rng, /*with_cross=*/false, /*with_conv=*/true, 0.3);
    const Tensor x = Tensor::randn({2, 5, 16}, rng, 0.8);
    worst_delta = std::max(worst_delta,
                           oracles::max_abs_diff(mssa(x, w_conv, cfg), mha_self(x, w_conv, cfg)));

    // Differential attention rows always cancel.
    auto w_dca = make_attention_weights(cfg, rng, /*with_cross=*/true, /*with_conv=*/false, 0.5);
    const Tensor x_other = Tensor::randn({2, 5, 16}, rng, 0.8);
    const DcaResult res = dca_full(x, x_other, w_dca, cfg);
    const std::int64_t S = res.diff_attn.shape().back();
    const auto attn = res.diff_attn.data();
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(attn.size()) / S; ++r) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < S; ++c) sum += attn[r * S + c];
      worst_rowsum = std::max(worst_rowsum, std::abs(sum));
    }

    // Tying the two query maps on identical inputs cancels the output too.
    auto w_tied = w_dca;
    w_tied.w_q_cross = w_tied.w_q;
    w_tied.b_q_cross = w_tied.b_q;
    const Tensor cancelled = dca(x, x, w_tied, cfg);
    for (double v : cancelled.data()) {
      worst_tied = std::max(worst_tied, std::abs(v));
    }

    // Cross-attention over one stream is self-attention.
    auto w_plain = make_attention_weights(cfg, rng, /*with_cross=*/false, /*with_conv=*/false, 0.4);
    worst_cross = std::max(
        worst_cross, oracles::max_abs_diff(mha_cross(x, x, w_plain, cfg), mha_self(x, w_plain, cfg)));
  }

  std::ostringstream os;
  os << "mssa=sa " << fmt(worst_delta, 3) << ", diff rowsum " << fmt(worst_rowsum, 3)
     << ", tied-query output " << fmt(worst_tied, 3) << ", cross=self " << fmt(worst_cross, 3);
  detail = os.str();
  return worst_delta <= 1e-12 && worst_rowsum <= 1e-12 && worst_tied <= 1e-10 &&
         worst_cross <= 1e-12;
}

// ---------------------------------------------------------------------------
// 3. The objectives hit their closed-form values.

bool criterion_objectives(std::string& detail) {
  double worst = 0.0;

  // Uniform logits: every row costs exactly ln 2.
  {
    const Tensor logits({3, 2}, {0.7, 0.7, -3.0, -3.0, 0.0, 0.0});
    const double ce = cross_entropy(logits, {0, 1, 1}).scalar_value();
    worst = std::max(worst, std::abs(ce - std::log(2.0)));
  }

  // Alignment loss on analytic embeddings. Row 0 is the excluded CLS slot
  // and is filled with junk to prove it does not participate.
  {
    const auto with_tokens = [](double a0, double a1) {
      // [1, 3, 2]: junk CLS row, then token rows forming the vector (a0, a1, 0, 0).
      return Tensor({1, 3, 2}, {9.0, -4.0, a0, a1, 0.0, 0.0});
    };
    const Tensor e1 = with_tokens(1.0, 0.0);      // unit direction
    const Tensor e1_scaled = with_tokens(2.0, 0.0);
    const Tensor e2 = with_tokens(0.0, 1.0);      // orthogonal direction
    const Tensor e1_neg = with_tokens(-1.0, 0.0); // opposite direction

    const double aligned_real = alignment_loss(e1, e1_scaled, {1}).scalar_value();
    const double orth_fake = alignment_loss(e1, e2, {0}).scalar_value();
    const double orth_real = alignment_loss(e1, e2, {1}).scalar_value();
    const double anti_fake = alignment_loss(e1, e1_neg, {0}).scalar_value();
    worst = std::max({worst, std::abs(aligned_real - 0.0), std::abs(orth_fake - 0.0),
                      std::abs(orth_real - 1.0), std::abs(anti_fake - 0.0)});
  }

  // The combined objective is exactly its weighted components, for any weights.
  {
    std::mt19937_64 rng(31);
    const Tensor la = Tensor::randn({4, 2}, rng);
    const Tensor lv = Tensor::randn({4, 2}, rng);
    const Tensor lm = Tensor::randn({4, 2}, rng);
    const Tensor Z_a = Tensor::randn({4, 5, 6}, rng);
    const Tensor Z_v = Tensor::randn({4, 5, 6}, rng);
    const std::vector<LabelTriple> labels = {{1, 1, 1}, {0, 1, 0}, {1, 0, 0}, {0, 0, 0}};
    std::vector<int> ya, yv, ym;
    for (const auto& l : labels) {
      ya.push_back(l.y_a);
      yv.push_back(l.y_v);
      ym.push_back(l.y_m);
    }
    const double ce_a = cross_entropy(la, ya).scalar_value();
    const double ce_v = cross_entropy(lv, yv).scalar_value();
    const double ce_m = cross_entropy(lm, ym).scalar_value();
    const double align = alignment_loss(Z_a, Z_v, ym).scalar_value();

    std::uniform_real_distribution<double> unif(0.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
      LossWeights w;
      w.ce_a = unif(rng);
      w.ce_v = unif(rng);
      w.ce_av = unif(rng);
      w.c = unif(rng);
      if (trial % 7 == 0) w.ce_a = 0.0;  // exercise the skipped-term path
      if (trial % 11 == 0) w.c = 0.0;
      const double total = total_loss(la, lv, lm, Z_a, Z_v, labels, w).scalar_value();
      const double recomputed = w.ce_a * ce_a + w.ce_v * ce_v + w.ce_av * ce_m + w.c * align;
      worst = std::max(worst, std::abs(total - recomputed));
    }
  }

  detail = "worst deviation " + fmt(worst, 3) + " (tol 1e-12)";
  return worst <= 1e-12;
}

// ---------------------------------------------------------------------------
// 4. Ranking metrics agree with brute force.

bool criterion_metrics(std::string& detail) {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<int> size_dist(2, 50);
  std::uniform_int_distribution<int> level_dist(0, 8);  // quarter steps force ties
  std::uniform_int_distribution<int> bit(0, 1);

  int auc_exact = 0, acc_exact = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const int n = size_dist(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n), preds(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = level_dist(rng) / 4.0;
      labels[i] = bit(rng);
      preds[i] = bit(rng);
    }
    labels[0] = 1;  // both classes must appear
    labels[n - 1] = 0;

    if (auc(scores, labels) == oracles::auc_all_pairs(scores, labels)) ++auc_exact;

    int hits = 0;
    for (int i = 0; i < n; ++i) hits += preds[i] == labels[i] ? 1 : 0;
    if (accuracy(preds, labels) == static_cast<double>(hits) / n) ++acc_exact;
  }

  std::ostringstream os;
  os << auc_exact << "/" << trials << " auc and " << acc_exact << "/" << trials
     << " accuracy sets match exactly";
  detail = os.str();
  return auc_exact == trials && acc_exact == trials;
}

// ---------------------------------------------------------------------------
// 5. The desk preset learns the synthetic task and generalizes.

bool criterion_desk_training(std::string& detail) {
  const auto started = std::chrono::steady_clock::now();

  RunConfig cfg;
  apply_preset(cfg, "desk");
  cfg.synth.seed = 7;
  cfg.synth.n_per_category = 16;        // 64 training samples
  cfg.synth.n_test_per_category = 64;   // 256 held-out samples, disjoint draws
  cfg.synth.noise_sigma = 0.05;
  cfg.max_steps = 300;
  cfg.seed = 0;
  cfg.out_dir = scratch_dir("desk").string();

  const TrainResult result = train(cfg);

  int steps_to_perfect = -1;
  for (const auto& epoch : result.history) {
    if (epoch.train_accuracy == 1.0) {
      steps_to_perfect = epoch.steps_done;
      break;
    }
  }

  const DatasetSplit ds = load_dataset(cfg);
  const EvalResult on_test = evaluate(result.model, ds.test, cfg.batch_size, cfg.model.loss);
  const double test_auc = on_test.auc.value_or(0.0);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::ostringstream os;
  os << "train ACC hit 1.0 at step " << steps_to_perfect << "/" << result.steps_run
     << ", test AUC " << fmt(test_auc, 4) << " on " << on_test.n << " samples (need >= 0.90), "
     << fmt(seconds, 3) << "s";
  detail = os.str();
  return steps_to_perfect > 0 && steps_to_perfect <= 300 && test_auc >= 0.90 && seconds < 180.0;
}

// ---------------------------------------------------------------------------
// 6. The ablation table is deterministic and honest.

bool criterion_ablation(std::string& detail) {
  RunConfig base = tiny_run(scratch_dir("ablate"));
  const auto rows = ablate(base);

  const char* expected_labels[4] = {"CA+SA", "CA+MSSA", "DCA+SA", "DCA+MSSA"};
  bool ok = rows.size() == 4;
  for (size_t i = 0; ok && i < 4; ++i) ok = rows[i].label == expected_labels[i];

  // Every row must equal a from-scratch pipeline with the same settings.
  for (size_t i = 0; ok && i < 4; ++i) {
    RunConfig solo = base;
    solo.model.cross_variant = rows[i].cross;
    solo.model.self_variant = rows[i].self;
    solo.out_dir = scratch_dir("ablate_solo_" + std::to_string(i)).string();
    const TrainResult run = train(solo);
    const DatasetSplit ds = load_dataset(solo);
    const EvalResult ev = evaluate(run.model, ds.test, solo.batch_size, solo.model.loss);
    ok = rows[i].eval.accuracy == ev.accuracy && rows[i].eval.mean_loss == ev.mean_loss &&
         rows[i].eval.auc.has_value() == ev.auc.has_value() &&
         (!ev.auc || *rows[i].eval.auc == *ev.auc);
  }

  // And a rerun reproduces the table bit for bit.
  RunConfig again = tiny_run(scratch_dir("ablate_again"));
  const auto rows2 = ablate(again);
  for (size_t i = 0; ok && i < 4; ++i) {
    ok = rows[i].label == rows2[i].label && rows[i].eval.accuracy == rows2[i].eval.accuracy &&
         rows[i].eval.mean_loss == rows2[i].eval.mean_loss &&
         rows[i].eval.auc.has_value() == rows2[i].eval.auc.has_value() &&
         (!rows[i].eval.auc || *rows[i].eval.auc == *rows2[i].eval.auc);
  }

  std::ostringstream os;
  for (size_t i = 0; i < rows.size(); ++i) {
    os << (i ? ", " : "") << rows[i].label << " auc "
       << (rows[i].eval.auc ? fmt(*rows[i].eval.auc, 4) : std::string("n/a"));
  }
  detail = os.str();
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Serialization round-trips are lossless.

bool criterion_roundtrips(std::string& detail) {
  // Dataset export and reload.
  SynthConfig sc;
  sc.n_per_category = 3;
  sc.n_val_per_category = 2;
  sc.n_test_per_category = 2;
  sc.T = 5;
  sc.C_a = 7;
  sc.C_v_feat = 6;
  sc.seed = 13;
  const DatasetSplit ds = generate_dataset(sc);
  const auto manifest = export_dataset(ds, scratch_dir("roundtrip_data"));
  const DatasetSplit back = load_manifest(manifest);

  bool data_ok = true;
  const auto compare_split = [&](const std::vector<SampleRecord>& a,
                                 const std::vector<SampleRecord>& b) {
    if (a.size() != b.size()) {
      data_ok = false;
      return;
    }
    for (size_t i = 0; i < a.size(); ++i) {
      data_ok = data_ok && a[i].sample_id == b[i].sample_id && a[i].category == b[i].category &&
                a[i].labels.y_a == b[i].labels.y_a && a[i].labels.y_v == b[i].labels.y_v &&
                a[i].labels.y_m == b[i].labels.y_m &&
                oracles::max_abs_diff(a[i].audio, b[i].audio) == 0.0 &&
                oracles::max_abs_diff(a[i].visual, b[i].visual) == 0.0;
    }
  };
  compare_split(ds.train, back.train);
  compare_split(ds.val, back.val);
  compare_split(ds.test, back.test);

  // Checkpoint reload reproduces evaluation bit for bit.
  RunConfig cfg = tiny_run(scratch_dir("roundtrip_ckpt"));
  cfg.epochs = 2;
  const TrainResult run = train(cfg);
  const DatasetSplit eval_ds = load_dataset(cfg);
  const EvalResult direct = evaluate(run.model, eval_ds.test, cfg.batch_size, cfg.model.loss);
  const Model reloaded = load_checkpoint(run.final_checkpoint);
  const EvalResult resumed = evaluate(reloaded, eval_ds.test, cfg.batch_size, cfg.model.loss);

  bool confusion_ok = direct.confusion.size() == resumed.confusion.size();
  for (const auto& [cat, row] : direct.confusion) {
    const auto it = resumed.confusion.find(cat);
    confusion_ok = confusion_ok && it != resumed.confusion.end() &&
                   it->second.pred_fake == row.pred_fake && it->second.pred_real == row.pred_real;
  }
  const bool ckpt_ok = direct.accuracy == resumed.accuracy &&
                       direct.mean_loss == resumed.mean_loss &&
                       direct.auc.has_value() == resumed.auc.has_value() &&
                       (!direct.auc || *direct.auc == *resumed.auc) && confusion_ok;

  std::ostringstream os;
  os << "dataset " << (data_ok ? "equal" : "DIFFERS") << " over "
     << ds.train.size() + ds.val.size() + ds.test.size() << " samples; reloaded eval "
     << (ckpt_ok ? "identical" : "DIFFERS") << " (ACC " << fmt(resumed.accuracy, 4) << ")";
  detail = os.str();
  return data_ok && ckpt_ok;
}

}  // namespace

int main() {
  std::cout << "acceptance checks (tolerances are pinned in code)\n";
  criterion(1, "analytic gradients match central differences (10 seeds, eps 1e-5, tol 1e-4)",
            criterion_gradients);
  criterion(2, "attention degeneracies are exact", criterion_attention_degeneracies);
  criterion(3, "objectives hit closed-form values", criterion_objectives);
  criterion(4, "metrics match brute-force oracles on 200 tied sets", criterion_metrics);
  criterion(5, "desk preset reaches train ACC 1.0 in 300 steps and test AUC >= 0.90",
            criterion_desk_training);
  criterion(6, "ablation table is deterministic and equals independent runs",
            criterion_ablation);
  criterion(7, "dataset and checkpoint round-trips are lossless", criterion_roundtrips);

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
