// msct: generation, training, evaluation, ablation, gradient checking and
// embedding export for the multi-scale cross-modal transformer.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msct/checkpoint.hpp"
#include "msct/runner.hpp"

namespace {

using namespace msct;

/// Flags shared by the run-driving subcommands. Presence is tracked through
/// CLI11 counts so unset flags never clobber preset/config-file values.
struct RunFlags {
  std::string config, preset, self_v, cross_v, out, manifest, split;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, max_steps = 0;
  double lr = 0.0;
};

void add_run_options(CLI::App* sub, RunFlags& f, bool with_train_flags) {
  sub->add_option("--config", f.config, "JSON run config, overlaid onto the preset");
  sub->add_option("--preset", f.preset, "named baseline config")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--seed", f.seed, "run seed (model init and batch shuffling)");
  sub->add_option("--out", f.out, "output directory for all artifacts");
  sub->add_option("--data", f.manifest, "dataset manifest.csv (replaces synthetic data)");
  sub->add_option("--batch-size", f.batch_size, "samples per optimizer step");
  if (with_train_flags) {
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--max-steps", f.max_steps, "stop after this many optimizer steps (0 = no cap)");
    sub->add_option("--lr", f.lr, "Adam learning rate");
    sub->add_option("--self", f.self_v, "self-attention slot variant")
        ->check(CLI::IsMember({"sa", "mssa"}));
    sub->add_option("--cross", f.cross_v, "cross-attention slot variant")
        ->check(CLI::IsMember({"ca", "dca"}));
  }
}

bool flag_given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

/// Overlay order: defaults, preset, config file, explicit flags.
RunConfig build_run_config(const CLI::App* sub, const RunFlags& f) {
  RunConfig cfg;
  if (flag_given(sub, "--preset")) apply_preset(cfg, f.preset);
  if (flag_given(sub, "--config")) apply_config_file(cfg, f.config);
  if (flag_given(sub, "--seed")) cfg.seed = f.seed;
  if (flag_given(sub, "--out")) cfg.out_dir = f.out;
  if (flag_given(sub, "--data")) cfg.manifest = f.manifest;
  if (flag_given(sub, "--batch-size")) cfg.batch_size = f.batch_size;
  if (flag_given(sub, "--epochs")) cfg.epochs = f.epochs;
  if (flag_given(sub, "--max-steps")) cfg.max_steps = f.max_steps;
  if (flag_given(sub, "--lr")) cfg.optim.lr = f.lr;
  if (flag_given(sub, "--self")) cfg.model.self_variant = parse_self_variant(f.self_v);
  if (flag_given(sub, "--cross")) cfg.model.cross_variant = parse_cross_variant(f.cross_v);
  return cfg;
}

std::string fmt_auc(const std::optional<double>& auc_value) {
  if (!auc_value) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *auc_value;
  return os.str();
}

void print_eval(std::ostream& os, const std::string& split, const EvalResult& ev) {
  os << "split " << split << ": n=" << ev.n << "  ACC=" << std::fixed << std::setprecision(4)
     << ev.accuracy << "  AUC=" << fmt_auc(ev.auc) << "  loss=" << std::setprecision(6)
     << ev.mean_loss << "\n";
  os << "  per-category predictions (fake/real):\n";
  for (const auto& [cat, row] : ev.confusion) {
    os << "    " << cat << ": " << row.pred_fake << "/" << row.pred_real << "\n";
  }
}

nlohmann::json eval_json(const std::string& split, const EvalResult& ev) {
  nlohmann::json confusion;
  for (const auto& [cat, row] : ev.confusion) {
    confusion[cat] = {{"pred_fake", row.pred_fake}, {"pred_real", row.pred_real}};
  }
  return nlohmann::json{{"split", split},
                        {"n", ev.n},
                        {"acc", ev.accuracy},
                        {"auc", ev.auc ? nlohmann::json(*ev.auc) : nlohmann::json()},
                        {"mean_loss", ev.mean_loss},
                        {"confusion", confusion}};
}

int cmd_gen_data(const SynthConfig& sc, const std::string& out_dir) {
  const DatasetSplit ds = generate_dataset(sc);
  const auto manifest = export_dataset(ds, out_dir);
  const struct {
    const char* name;
    const std::vector<SampleRecord>& records;
  } splits[3] = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  std::cout << "wrote " << manifest.string() << "\n";
  for (const auto& split : splits) {
    if (split.records.empty()) continue;
    std::cout << "  " << split.name << ": " << split.records.size() << " samples (";
    for (size_t i = 0; i < 4; ++i) {
      const Category cat = kAllCategories[i];
      const auto count = std::count_if(split.records.begin(), split.records.end(),
                                       [&](const SampleRecord& r) { return r.category == cat; });
      std::cout << (i ? ", " : "") << to_string(cat) << " " << count;
    }
    std::cout << ")\n";
  }
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const TrainResult result = train(cfg);
  const EpochStats& last = result.history.back();
  std::cout << "trained " << result.steps_run << " steps over " << result.history.size()
            << " epochs\n";
  std::cout << "final train ACC=" << std::fixed << std::setprecision(4) << last.train_accuracy
            << " AUC=" << fmt_auc(last.train_auc);
  if (last.val_accuracy) {
    std::cout << "  val ACC=" << *last.val_accuracy << " AUC=" << fmt_auc(last.val_auc);
  }
  std::cout << "\n";
  std::cout << "checkpoints: " << result.final_checkpoint.string() << ", "
            << result.best_checkpoint.string() << "\n";
  std::cout << "metrics: " << result.metrics_path.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, std::string split) {
  const Model model = load_checkpoint(ckpt_path);
  const DatasetSplit ds = load_dataset(cfg);
  const auto& records = pick_eval_split(ds, split);
  const EvalResult ev = evaluate(model, records, cfg.batch_size, model.config().loss);
  print_eval(std::cout, split, ev);

  std::filesystem::create_directories(cfg.out_dir);
  const auto report_path = std::filesystem::path(cfg.out_dir) / ("eval-" + split + ".json");
  std::ofstream out(report_path);
  out << eval_json(split, ev).dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write report: " + report_path.string());
  std::cout << "report: " << report_path.string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const auto rows = ablate(cfg);

  std::cout << std::left << std::setw(10) << "config" << std::setw(7) << "split" << std::right
            << std::setw(6) << "n" << std::setw(9) << "ACC" << std::setw(9) << "AUC" << "\n";
  for (const auto& row : rows) {
    std::cout << std::left << std::setw(10) << row.label << std::setw(7) << row.eval_split
              << std::right << std::setw(6) << row.eval.n << std::setw(9) << std::fixed
              << std::setprecision(4) << row.eval.accuracy << std::setw(9) << fmt_auc(row.eval.auc)
              << "\n";
  }

  std::filesystem::create_directories(cfg.out_dir);
  const auto csv_path = std::filesystem::path(cfg.out_dir) / "ablation.csv";
  std::ofstream csv(csv_path);
  csv << "config,split,n,acc,auc\n" << std::setprecision(17);
  for (const auto& row : rows) {
    csv << row.label << ',' << row.eval_split << ',' << row.eval.n << ',' << row.eval.accuracy
        << ',';
    if (row.eval.auc) csv << *row.eval.auc;
    else csv << "n/a";
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write table: " + csv_path.string());
  std::cout << "table: " << csv_path.string() << "\n";
  return 0;
}

int cmd_gradcheck(int seeds, double eps, double inject_error, int threads) {
  const GradCheckRun run = gradcheck_all(seeds, eps, inject_error, threads);
  std::cout << "gradient check: eps=" << eps << ", seeds=" << run.seeds
            << ", tolerance=" << run.rtol << "\n";

  // One aggregate line per family; failures name the worst parameter.
  std::string current;
  double family_max = 0.0;
  const GradCheckCase* family_worst = nullptr;
  auto flush = [&] {
    if (current.empty()) return;
    std::cout << "  " << std::left << std::setw(18) << current << "max rel err "
              << std::scientific << std::setprecision(3) << family_max;
    if (family_max < run.rtol) {
      std::cout << "  pass\n";
    } else {
      std::cout << "  FAIL (seed " << family_worst->seed << ", param "
                << family_worst->report.worst_param << ")\n";
    }
  };
  for (const auto& c : run.cases) {
    if (c.family != current) {
      flush();
      current = c.family;
      family_max = -1.0;
      family_worst = nullptr;
    }
    if (c.report.max_rel_err > family_max) {
      family_max = c.report.max_rel_err;
      family_worst = &c;
    }
  }
  flush();

  if (!run.all_passed()) {
    const GradCheckCase* w = run.worst();
    std::cout << "FAIL: " << w->family << " seed " << w->seed << " param "
              << w->report.worst_param << " rel err " << std::scientific << std::setprecision(3)
              << w->report.max_rel_err << " >= " << run.rtol << "\n";
    return 1;
  }
  std::cout << "all " << run.cases.size() << " checks passed\n";
  return 0;
}

int cmd_export_embeddings(const RunConfig& cfg, const std::string& ckpt_path, std::string split) {
  const Model model = load_checkpoint(ckpt_path);
  const DatasetSplit ds = load_dataset(cfg);
  const int C = model.config().C;

  std::vector<const SampleRecord*> records;
  if (split == "all") {
    for (const auto* s : {&ds.train, &ds.val, &ds.test}) {
      for (const auto& rec : *s) records.push_back(&rec);
    }
    if (records.empty()) throw std::invalid_argument("dataset is empty");
  } else {
    for (const auto& rec : pick_eval_split(ds, split)) records.push_back(&rec);
  }

  std::filesystem::create_directories(cfg.out_dir);
  const auto csv_path = std::filesystem::path(cfg.out_dir) / "embeddings.csv";
  std::ofstream csv(csv_path);
  csv << "sample_id,category";
  for (int c = 0; c < C; ++c) csv << ",z_a_" << c;
  for (int c = 0; c < C; ++c) csv << ",z_v_" << c;
  csv << "\n" << std::setprecision(17);

  for (const SampleRecord* rec : records) {
    // Records hold [T, C_a] audio; the model takes [B, C_a, T].
    const auto T = rec->audio.size(0), Ca = rec->audio.size(1);
    Tensor x_a = Tensor::zeros({1, Ca, T});
    auto& ad = x_a.mutable_values();
    auto src = rec->audio.data();
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t c = 0; c < Ca; ++c) ad[c * T + t] = src[t * Ca + c];
    }
    Shape vshape = rec->visual.shape();
    vshape.insert(vshape.begin(), 1);
    const Tensor v(vshape, std::vector<double>(rec->visual.data().begin(), rec->visual.data().end()));

    const auto out = model.forward(x_a, v);
    csv << rec->sample_id << ',' << to_string(rec->category);
    for (int c = 0; c < C; ++c) csv << ',' << out.Z_a.Z.at({0, 0, c});
    for (int c = 0; c < C; ++c) csv << ',' << out.Z_v.Z.at({0, 0, c});
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write embeddings: " + csv_path.string());
  std::cout << "wrote " << records.size() << " rows to " << csv_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scale cross-modal transformer for audio-visual deepfake detection"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset on disk");
  SynthConfig sc;
  std::string gen_out;
  gen->add_option("--n", sc.n_per_category, "train samples per category")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--n-val", sc.n_val_per_category, "val samples per category")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--n-test", sc.n_test_per_category, "test samples per category")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", sc.seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--noise-sigma", sc.noise_sigma, "observation noise stddev");
  gen->add_option("--frames", sc.T, "frames per clip");
  gen->add_option("--c-a", sc.C_a, "audio feature channels");
  gen->add_option("--c-v", sc.C_v_feat, "visual feature channels");
  gen->add_option("--d-latent", sc.d_latent, "latent path dimension");

  // train
  auto* tr = app.add_subcommand("train", "train a model and write checkpoints");
  RunFlags tr_flags;
  add_run_options(tr, tr_flags, /*with_train_flags=*/true);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  RunFlags ev_flags;
  std::string ev_ckpt, ev_split;
  add_run_options(ev, ev_flags, /*with_train_flags=*/false);
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--split", ev_split, "dataset split (default: test, then val, then train)")
      ->check(CLI::IsMember({"train", "val", "test"}));

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate the four attention-slot variants");
  RunFlags ab_flags;
  add_run_options(ab, ab_flags, /*with_train_flags=*/true);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient family");
  int gc_seeds = 10, gc_threads = 0;
  double gc_eps = 1e-5, gc_inject = 0.0;
  gc->add_option("--seeds", gc_seeds, "random seeds per family")->check(CLI::PositiveNumber);
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--threads", gc_threads, "worker threads (0 = auto)");
  gc->add_option("--inject-error", gc_inject, "fault-injection hook: offset added to one gradient");

  // export-embeddings
  auto* ex = app.add_subcommand("export-embeddings",
                                "write per-sample CLS embeddings of both branches as CSV");
  RunFlags ex_flags;
  std::string ex_ckpt, ex_split = "all";
  add_run_options(ex, ex_flags, /*with_train_flags=*/false);
  ex->add_option("--checkpoint", ex_ckpt, "model checkpoint")->required();
  ex->add_option("--split", ex_split, "dataset split or 'all'")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(sc, gen_out);
    if (tr->parsed()) return cmd_train(build_run_config(tr, tr_flags));
    if (ev->parsed()) return cmd_eval(build_run_config(ev, ev_flags), ev_ckpt, ev_split);
    if (ab->parsed()) return cmd_ablate(build_run_config(ab, ab_flags));
    if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_eps, gc_inject, gc_threads);
    if (ex->parsed()) {
      return cmd_export_embeddings(build_run_config(ex, ex_flags), ex_ckpt, ex_split);
    }
  } catch (const msct::TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
