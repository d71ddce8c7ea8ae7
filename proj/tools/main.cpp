#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "mexit/errors.hpp"

using namespace mexit::cli;

namespace {

// Exit codes: 0 success, 2 config/usage error, 3 numerical failure.
constexpr int EXIT_CONFIG = 2;
constexpr int EXIT_NUMERICAL = 3;

void add_dataset_options(CLI::App* cmd, RunConfig& config) {
  cmd->add_option("--classes", config.dataset.classes, "number of classes")
      ->capture_default_str();
  cmd->add_option("--text-dim", config.dataset.text_dim, "text feature width")
      ->capture_default_str();
  cmd->add_option("--vision-dim", config.dataset.vision_dim, "vision feature width")
      ->capture_default_str();
  cmd->add_option("--train-size", config.dataset.train_size, "training split size")
      ->capture_default_str();
  cmd->add_option("--val-size", config.dataset.val_size, "validation split size")
      ->capture_default_str();
  cmd->add_option("--test-size", config.dataset.test_size, "test split size")
      ->capture_default_str();
  cmd->add_option("--easy-scale", config.dataset.easy_scale,
                  "signature scale of single-modality-easy classes")
      ->capture_default_str();
  cmd->add_option("--fusion-scale", config.dataset.fusion_scale,
                  "signature scale of fusion-easy classes")
      ->capture_default_str();
  cmd->add_option("--deep-scale", config.dataset.deep_scale,
                  "signature scale of deep-only classes")
      ->capture_default_str();
}

void add_backbone_options(CLI::App* cmd, RunConfig& config) {
  cmd->add_option("--stem-width", config.backbone.stem_width, "modality stem width")
      ->capture_default_str();
  cmd->add_option("--fused-width", config.backbone.fused_width, "encoder width")
      ->capture_default_str();
  cmd->add_option("--encoder-layers", config.backbone.encoder_layers, "encoder block count L")
      ->capture_default_str();
  cmd->add_option("--activation", [&config](const std::vector<std::string>& v) {
        config.backbone.activation = mexit::parse_activation(v.front());
        return true;
      },
      "nonlinearity (tanh|relu)")
      ->default_str("tanh");
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig config;
  // Config file loads first so that explicit flags override its values.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        config = load_run_config(argv[i + 1]);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return EXIT_CONFIG;
      }
    }
  }

  CLI::App app{"multi-exit classifier workbench: synthetic data, training, calibration,\n"
               "exit policies and accuracy/latency Pareto evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override file values");
  app.add_option("--seed", config.seed,
                 "master seed; data/init/shuffle/search substreams derive from it")
      ->capture_default_str();

  Paths paths;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multimodal dataset");
  gen->add_option("--out", paths.out, "output directory")->required();
  add_dataset_options(gen, config);

  auto* tr = app.add_subcommand("train",
                                "fine-tune a multi-exit network (modality dims and class count "
                                "follow the dataset)");
  tr->add_option("--data", paths.data, "dataset directory")->required();
  tr->add_option("--out", paths.out, "checkpoint output path")->required();
  tr->add_option("--history", paths.history, "training history JSONL output");
  tr->add_option("--placement", config.placement,
                 "independent-all|concat-all|concat-single|concat-quarter|concat-alternate|"
                 "custom:<anchors>")
      ->capture_default_str();
  tr->add_option("--head", config.head, "exit head kind (ramp|gate)")->capture_default_str();
  tr->add_option("--strategy", config.strategy,
                 "uniform|weighted|entropyreg|weighted-entropyreg")
      ->capture_default_str();
  tr->add_option("--gamma", config.gamma, "exit-vs-final tradeoff in [0,1]")
      ->capture_default_str();
  tr->add_option("--epochs", config.train.epochs, "training epochs")->capture_default_str();
  tr->add_option("--batch-size", config.train.batch_size, "batch size")->capture_default_str();
  tr->add_option("--learning-rate", config.train.learning_rate, "AdamW learning rate")
      ->capture_default_str();
  tr->add_option("--weight-decay", config.train.weight_decay, "AdamW weight decay")
      ->capture_default_str();
  add_backbone_options(tr, config);

  auto add_eval_inputs = [&paths](CLI::App* cmd, bool with_calibration) {
    cmd->add_option("--checkpoint", paths.checkpoint, "trained network checkpoint");
    cmd->add_option("--data", paths.data, "dataset directory");
    cmd->add_option("--trace", paths.trace, "logit trace JSONL (replaces checkpoint+data)");
    cmd->add_option("--split", paths.split, "train|val|test")->capture_default_str();
    if (with_calibration) {
      cmd->add_option("--calibration", paths.calibration, "calibration table JSON");
      cmd->add_flag("--no-calibration", paths.no_calibration, "threshold raw confidences");
    }
  };

  auto* cal = app.add_subcommand("calibrate",
                                 "fit per-exit temperatures on the validation split");
  cal->add_option("--checkpoint", paths.checkpoint, "trained network checkpoint");
  cal->add_option("--data", paths.data, "dataset directory");
  cal->add_option("--trace", paths.trace, "logit trace JSONL (replaces checkpoint+data)");
  cal->add_option("--out", paths.out, "calibration table output path")->required();
  cal->add_option("--bins", config.calibration_bins, "ECE bin count J")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-global", "sweep one global threshold over (0,1)");
  add_eval_inputs(sweep, true);
  sweep->add_option("--out", paths.out, "CSV output path")->required();
  sweep->add_option("--step", config.sweep_step, "threshold step")->capture_default_str();
  sweep->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* search = app.add_subcommand(
      "search-multi", "random multi-exit threshold search over percentile candidates");
  add_eval_inputs(search, true);
  search->add_option("--out", paths.out, "CSV output path")->required();
  search->add_option("--budget", config.search_budget, "max combinations to evaluate")
      ->capture_default_str();
  search->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* heur = app.add_subcommand("heuristic",
                                  "per-exit thresholds from the calibration table's ACC/ECE");
  add_eval_inputs(heur, false);
  heur->add_option("--calibration", paths.calibration, "calibration table JSON")->required();
  heur->add_option("--out", paths.out, "one-row CSV output path")->required();
  heur->add_option("--policy-out", paths.policy, "write the threshold policy JSON here");
  heur->add_option("--epsilon", config.epsilon, "min-max padding, keeps thresholds inside (0,1)")
      ->capture_default_str();
  heur->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "evaluate a policy on a split");
  add_eval_inputs(ev, true);
  ev->add_option("--policy", paths.policy, "policy JSON (default: global --tau)");
  ev->add_option("--tau", config.tau, "global threshold when no policy file is given")
      ->capture_default_str();
  ev->add_option("--out", paths.out, "metrics JSON output path");
  ev->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* pat = app.add_subcommand("exit-patterns",
                                 "per-class correct-exit matrix under a policy");
  add_eval_inputs(pat, true);
  pat->add_option("--policy", paths.policy, "policy JSON (default: global --tau)");
  pat->add_option("--tau", config.tau, "global threshold when no policy file is given")
      ->capture_default_str();
  pat->add_option("--out", paths.out, "CSV output path")->required();
  pat->add_flag("--counts", paths.counts_view, "raw counts instead of log-normalized");
  pat->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* cmp = app.add_subcommand(
      "compare", "run global (un)calibrated sweeps, multi-exit search and the heuristic");
  cmp->add_option("--checkpoint", paths.checkpoint, "trained network checkpoint")->required();
  cmp->add_option("--data", paths.data, "dataset directory")->required();
  cmp->add_option("--out", paths.out, "output directory")->required();
  cmp->add_option("--step", config.sweep_step, "global sweep step")->capture_default_str();
  cmp->add_option("--budget", config.search_budget, "search budget")->capture_default_str();
  cmp->add_option("--epsilon", config.epsilon, "heuristic epsilon")->capture_default_str();
  cmp->add_option("--bins", config.calibration_bins, "ECE bin count J")->capture_default_str();
  cmp->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  auto* dump = app.add_subcommand("dump-trace", "write per-sample exit logits to a JSONL trace");
  dump->add_option("--checkpoint", paths.checkpoint, "trained network checkpoint")->required();
  dump->add_option("--data", paths.data, "dataset directory")->required();
  dump->add_option("--split", paths.split, "train|val|test")->capture_default_str();
  dump->add_option("--out", paths.out, "trace output path")->required();
  dump->add_option("--cost-model", config.cost_model, "uniform|ocr-aware[:surcharge]")
      ->capture_default_str();

  for (CLI::App* sub : {gen, tr, cal, sweep, search, heur, ev, pat, cmp, dump}) {
    sub->fallthrough();  // parent-level --seed/--config may follow the subcommand
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return EXIT_CONFIG;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, paths);
    if (tr->parsed()) return cmd_train(config, paths);
    if (cal->parsed()) return cmd_calibrate(config, paths);
    if (sweep->parsed()) return cmd_sweep_global(config, paths);
    if (search->parsed()) return cmd_search_multi(config, paths);
    if (heur->parsed()) return cmd_heuristic(config, paths);
    if (ev->parsed()) return cmd_evaluate(config, paths);
    if (pat->parsed()) return cmd_exit_patterns(config, paths);
    if (cmp->parsed()) return cmd_compare(config, paths);
    if (dump->parsed()) return cmd_dump_trace(config, paths);
  } catch (const mexit::numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return EXIT_NUMERICAL;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_CONFIG;
  }
  return EXIT_CONFIG;
}
