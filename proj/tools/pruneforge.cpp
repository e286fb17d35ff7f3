// pruneforge command-line interface: baseline training, kernel scoring,
// automated pruning campaigns, evaluation, FLOPs accounting and the HTTP API.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pruneforge/analysis.hpp"
#include "pruneforge/api.hpp"
#include "pruneforge/checkpoint.hpp"
#include "pruneforge/dataio.hpp"
#include "pruneforge/defaults.hpp"
#include "pruneforge/metrics.hpp"
#include "pruneforge/model.hpp"
#include "pruneforge/relevance.hpp"
#include "pruneforge/retraining.hpp"
#include "pruneforge/session.hpp"

using namespace pruneforge;

namespace {

using desk::kBaselineEpochs;
using desk::kBaselineRate;
using desk::kCompleteRate;
using desk::kFinalRate;
using desk::kProgressiveBaseRate;

const char* kDefaultDataset = desk::kDataset;

struct DataOptions {
  std::string dataset = kDefaultDataset;
  std::size_t splits = 1;
  std::size_t split = 0;
  double train_fraction = 0.5;
  std::uint64_t split_seed = 0;

  void add(CLI::App* app) {
    app->add_option("-d,--dataset", dataset, "Manifest path or synthetic:key=value,... reference")
        ->capture_default_str();
    app->add_option("--split", split, "Split index")->capture_default_str();
    app->add_option("--train-fraction", train_fraction, "Training fraction per class")->capture_default_str();
    app->add_option("--split-seed", split_seed, "Seed of the random splits")->capture_default_str();
  }
};

struct PreparedData {
  Dataset raw;
  LabeledBatch train;
  LabeledBatch test;
};

PreparedData prepare(const DataOptions& o, std::size_t split_count) {
  PreparedData d;
  d.raw = resolve_dataset(o.dataset);
  const SplitPlan plan = make_splits(d.raw, split_count, o.train_fraction, o.split_seed);
  const Split& split = plan.splits.at(o.split);
  const NormalizedDataset norm = normalize(d.raw, split.train);
  for (const auto& w : norm.record.warnings) std::cerr << "warning: " << w << "\n";
  d.train = norm.dataset.batch(split.train);
  d.test = norm.dataset.batch(split.test);
  return d;
}

InputResolution parse_input(const std::string& text) {
  InputResolution r;
  if (std::sscanf(text.c_str(), "%zux%zux%zu", &r.channels, &r.height, &r.width) != 3) {
    throw Error("input must look like CxHxW, e.g. 3x200x200");
  }
  return r;
}

std::string sessions_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("PRUNEFORGE_SESSIONS")) return env;
  return "sessions";
}

void print_metrics(const char* label, const ConfusionMatrix& cm) {
  std::printf("%s accuracy %.4f  kappa %.4f  (n=%llu)\n", label, accuracy(cm), cohen_kappa(cm),
              static_cast<unsigned long long>(cm.total()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pruneforge: CNN kernel pruning with progressive retraining"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train a baseline model on a dataset split");
  DataOptions train_data;
  train_data.add(train);
  std::string train_preset = "tinyvgg", train_out = "model.ckpt";
  std::size_t train_epochs = kBaselineEpochs, train_batch = 16;
  double train_rate = kBaselineRate;
  std::uint64_t train_seed = 1;
  train->add_option("--preset", train_preset, "Architecture preset (tinyvgg, vgg16)")->capture_default_str();
  train->add_option("--epochs", train_epochs)->capture_default_str();
  train->add_option("--lr", train_rate, "Learning rate")->capture_default_str();
  train->add_option("--batch", train_batch)->capture_default_str();
  train->add_option("--seed", train_seed, "Initialization and shuffling seed")->capture_default_str();
  train->add_option("-o,--out", train_out, "Checkpoint to write")->capture_default_str();

  // ---- score ----
  auto* score = app.add_subcommand("score", "Score the kernels of one layer");
  DataOptions score_data;
  score_data.add(score);
  std::string score_model, score_criterion = "objective_loss_delta";
  std::size_t score_layer_index = 1;
  double score_fraction = 0.5;
  bool score_json = false;
  score->add_option("-m,--model", score_model, "Checkpoint")->required();
  score->add_option("-l,--layer", score_layer_index, "Conv layer (1-based)")->capture_default_str();
  score->add_option("-c,--criterion", score_criterion, "objective_loss_delta, l1_norm or apoz")->capture_default_str();
  score->add_option("--rho", score_fraction, "Fraction marked for removal")->capture_default_str();
  score->add_flag("--json", score_json, "Print JSON instead of a table");

  // ---- auto ----
  auto* automate = app.add_subcommand("auto", "Run automated oPPR/oPCR campaigns over one or more splits");
  DataOptions auto_data;
  auto_data.add(automate);
  std::string auto_method = "oPPR", auto_criterion = "objective_loss_delta", auto_model, auto_sessions,
              auto_preset = "tinyvgg", auto_json;
  double auto_rho = 0.5, auto_base = kProgressiveBaseRate, auto_final_rate = kFinalRate,
         auto_complete_rate = kCompleteRate, auto_baseline_rate = kBaselineRate;
  std::size_t auto_progressive_epochs = desk::kProgressiveEpochs, auto_final_epochs = desk::kFinalEpochs,
              auto_baseline_epochs = kBaselineEpochs, auto_batch = desk::kBatchSize,
              auto_retrain_batch = desk::kRetrainBatchSize;
  std::uint64_t auto_seed = 1;
  automate->add_option("--method", auto_method, "oPPR or oPCR")->capture_default_str();
  automate->add_option("--criterion", auto_criterion, "Relevance criterion")->capture_default_str();
  automate->add_option("--rho", auto_rho, "Fraction of kernels removed per layer")->capture_default_str();
  automate->add_option("--splits", auto_data.splits, "Number of random splits to run")->capture_default_str();
  automate->add_option("-m,--model", auto_model, "Baseline checkpoint (default: train the preset)");
  automate->add_option("--preset", auto_preset)->capture_default_str();
  automate->add_option("--baseline-epochs", auto_baseline_epochs)->capture_default_str();
  automate->add_option("--baseline-lr", auto_baseline_rate)->capture_default_str();
  automate->add_option("--progressive-epochs", auto_progressive_epochs)->capture_default_str();
  automate->add_option("--final-epochs", auto_final_epochs)->capture_default_str();
  automate->add_option("--progressive-base-lr", auto_base, "Layer-1 progressive rate; deeper layers are banded")
      ->capture_default_str();
  automate->add_option("--final-lr", auto_final_rate)->capture_default_str();
  automate->add_option("--complete-lr", auto_complete_rate)->capture_default_str();
  automate->add_option("--batch", auto_batch, "Baseline training batch size")->capture_default_str();
  automate->add_option("--retrain-batch", auto_retrain_batch, "Progressive, complete and final retraining batch size")
      ->capture_default_str();
  automate->add_option("--seed", auto_seed, "Run seed (model init, shuffling)")->capture_default_str();
  automate->add_option("--sessions", auto_sessions, "Sessions root (default $PRUNEFORGE_SESSIONS or ./sessions)");
  automate->add_option("--json", auto_json, "Also write the aggregated report to this file");

  // ---- serve ----
  auto* serve_cmd = app.add_subcommand("serve", "Serve the JSON API");
  std::string serve_host = "127.0.0.1", serve_sessions;
  int serve_port = 8080;
  serve_cmd->add_option("--host", serve_host)->capture_default_str();
  serve_cmd->add_option("-p,--port", serve_port)->capture_default_str();
  serve_cmd->add_option("--sessions", serve_sessions, "Sessions root (default $PRUNEFORGE_SESSIONS or ./sessions)");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split's test set");
  DataOptions eval_data;
  eval_data.add(eval);
  std::string eval_model, eval_reference;
  eval->add_option("-m,--model", eval_model, "Checkpoint")->required();
  eval->add_option("--reference", eval_reference, "Unpruned checkpoint for reduction percentages");

  // ---- flops ----
  auto* flops_cmd = app.add_subcommand("flops", "FLOPs and reductions of a preset under uniform pruning");
  std::string flops_preset = "vgg16", flops_input = "3x200x200";
  std::size_t flops_classes = 10;
  double flops_rho = 0.5;
  flops_cmd->add_option("--preset", flops_preset)->capture_default_str();
  flops_cmd->add_option("--input", flops_input, "CxHxW")->capture_default_str();
  flops_cmd->add_option("--classes", flops_classes)->capture_default_str();
  flops_cmd->add_option("--rho", flops_rho, "Fraction of kernels removed per layer")->capture_default_str();

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as sample files plus manifest");
  std::string synth_spec = kDefaultDataset, synth_out;
  synth->add_option("--spec", synth_spec)->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const PreparedData d = prepare(train_data, 1);
      const InputResolution in{d.train.images.dim(1), d.train.images.dim(2), d.train.images.dim(3)};
      ModelState model = build_preset(train_preset, in, d.raw.class_count(), train_seed);
      train_cross_entropy(model, d.train, train_epochs, train_rate, train_batch, train_seed,
                          [](const EpochProgress& p) {
                            std::printf("epoch %zu/%zu  loss %.4f\n", p.epoch, p.total, p.loss);
                          });
      save_checkpoint(model, train_out);
      print_metrics("train", evaluate(model, d.train));
      print_metrics("test ", evaluate(model, d.test));
      std::printf("wrote %s\n", train_out.c_str());
    } else if (*score) {
      const PreparedData d = prepare(score_data, 1);
      const ModelState model = load_checkpoint(score_model);
      const Criterion criterion = criterion_from_string(score_criterion);
      const auto scores = score_layer(criterion, model, score_layer_index, d.train);
      const KernelSet removed = select(scores, SelectionPolicy::fixed(score_fraction));
      if (score_json) {
        nlohmann::json j = {{"layer", score_layer_index}, {"criterion", to_string(criterion)}, {"scores", scores},
                            {"removed", removed.kernels}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::printf("%-8s %-16s %s\n", "kernel", to_string(criterion).c_str(), "remove");
        for (const auto& s : scores) {
          std::printf("%-8zu %-16.6g %s\n", s.kernel, s.value, removed.contains(s.kernel) ? "yes" : "");
        }
      }
    } else if (*automate) {
      const Method method = method_from_string(auto_method);
      SessionManager sessions({sessions_root(auto_sessions), {}, {}});
      std::vector<SplitMetrics> splits;
      for (std::size_t s = 0; s < auto_data.splits; ++s) {
        SessionConfig config;
        config.dataset = auto_data.dataset;
        config.split = {auto_data.splits, s, auto_data.train_fraction, auto_data.split_seed};
        config.method = method;
        config.criterion = criterion_from_string(auto_criterion);
        config.policy = SelectionPolicy::fixed(auto_rho);
        config.retrain.progressive_epochs = auto_progressive_epochs;
        config.retrain.final_epochs = auto_final_epochs;
        config.retrain.final_learning_rate = auto_final_rate;
        config.retrain.complete_learning_rate = auto_complete_rate;
        config.retrain.batch_size = auto_retrain_batch;
        config.retrain.seed = auto_seed;
        config.progressive_base_rate = auto_base;
        config.model.checkpoint = auto_model;
        config.model.preset = auto_preset;
        config.model.seed = auto_seed;
        config.model.epochs = auto_baseline_epochs;
        config.model.learning_rate = auto_baseline_rate;
        config.model.batch_size = auto_batch;
        const std::string id = sessions.start_session(config);
        std::printf("session %s (split %zu/%zu)\n", id.c_str(), s + 1, auto_data.splits);
        const auto baseline = sessions.state(id).history.front();
        std::printf("  baseline test accuracy %.4f  kappa %.4f\n", baseline.test_accuracy, baseline.test_kappa);
        const EvaluationReport report = sessions.run_automated(id);
        for (const auto& point : sessions.state(id).history) {
          if (point.layer == 0) continue;
          std::printf("  layer %zu committed: kernels %zu (-%.2f%%), test accuracy %.4f\n", point.layer,
                      point.kernels, point.kernel_reduction, point.test_accuracy);
        }
        splits.push_back(report.splits.front());
        std::printf("  final test accuracy %.4f  kappa %.4f\n", report.splits.front().accuracy,
                    report.splits.front().kappa);
      }
      const EvaluationReport summary = aggregate_splits(splits);
      std::cout << "\n" << summary.table(to_string(method));
      if (!auto_json.empty()) {
        std::FILE* f = std::fopen(auto_json.c_str(), "w");
        if (!f) throw Error("cannot write " + auto_json);
        const std::string text = nlohmann::json(summary).dump(2);
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
      }
    } else if (*serve_cmd) {
      SessionManager sessions({sessions_root(serve_sessions), {}, {}});
      std::printf("serving on http://%s:%d/api (sessions in %s)\n", serve_host.c_str(), serve_port,
                  sessions.root().string().c_str());
      std::fflush(stdout);
      serve(sessions, serve_host, serve_port);
    } else if (*eval) {
      const PreparedData d = prepare(eval_data, 1);
      const ModelState model = load_checkpoint(eval_model);
      print_metrics("test", evaluate(model, d.test));
      if (!eval_reference.empty()) {
        const auto r = reduction_percentages(load_checkpoint(eval_reference).spec, model.spec);
        std::printf("kernel reduction %.2f%%  GFLOPs reduction %.2f%%\n", r.kernel_reduction, r.gflops_reduction);
      }
    } else if (*flops_cmd) {
      const ArchitectureSpec original = preset_spec(flops_preset, parse_input(flops_input), flops_classes);
      const ArchitectureSpec pruned = uniformly_pruned_spec(original, flops_rho);
      const FlopsReport a = flops(original), b = flops(pruned);
      std::printf("%-8s %14s %14s\n", "layer", "GFLOPs", "pruned");
      for (std::size_t i = 0; i < a.layers.size(); ++i) {
        std::printf("%-8s %14.4f %14.4f\n", a.layers[i].name.c_str(), static_cast<double>(a.layers[i].flops) / 1e9,
                    static_cast<double>(b.layers[i].flops) / 1e9);
      }
      std::printf("%-8s %14.4f %14.4f\n", "total", static_cast<double>(a.total) / 1e9,
                  static_cast<double>(b.total) / 1e9);
      const auto r = reduction_percentages(original, pruned);
      std::printf("kernel reduction %.2f%%  GFLOPs reduction %.2f%% (conv only %.2f%%)\n", r.kernel_reduction,
                  r.gflops_reduction, r.conv_gflops_reduction);
      std::printf("convention: %s\n", FlopsReport::convention);
    } else if (*synth) {
      const Dataset ds = make_synthetic(parse_synthetic_spec(synth_spec));
      const auto manifest = write_dataset(ds, synth_out);
      std::printf("wrote %zu samples, manifest %s\n", ds.size(), manifest.string().c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
