// SPDX-License-Identifier: Apache-2.0
#include "pcsot/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pcsot/checkpoint.hpp"
#include "pcsot/config.hpp"
#include "pcsot/evaluation.hpp"
#include "pcsot/synthdata.hpp"
#include "pcsot/train.hpp"

namespace fs = std::filesystem;

namespace pcsot {

namespace {

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::string preset = "desk";
  int train_per_category = 64;
  int heldout_per_category = 16;
  int length = 10;
};

int cmd_synth(const SynthArgs& a) {
  if (a.preset != "desk") throw ConfigError("unknown dataset preset '" + a.preset + "'");
  DeskDataset ds = make_desk_dataset(a.seed, a.train_per_category,
                                     a.heldout_per_category, a.length);
  write_dataset(ds, a.out);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.heldout.size()
            << " held-out sequences to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string loss_log;
  std::string init;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : run_config_from_file(a.config);
  const std::vector<Sequence> dataset = read_dataset_split(fs::path(a.data) / "train");
  Model model(cfg.model);
  if (!a.init.empty()) load_checkpoint_into(model, a.init);
  TrainResult result = train(dataset, model, cfg.train);
  save_checkpoint(model, cfg, a.out);
  const std::string log_path = a.loss_log.empty() ? a.out + ".loss.csv" : a.loss_log;
  write_loss_log(result, log_path);
  std::cout << "trained " << cfg.train.steps << " steps on " << dataset.size()
            << " sequences; checkpoint " << a.out << ", loss log " << log_path << "\n";
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string report;
  std::string split = "heldout";
  bool oracle_head = false;
  bool identity_head = false;
  int jobs = 1;
};

int cmd_eval(const EvalArgs& a) {
  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  const std::vector<Sequence> dataset =
      read_dataset_split(fs::path(a.data) / a.split);
  EvalOptions opts;
  opts.jobs = a.jobs;
  if (a.oracle_head) opts.track.test_double = TrackOptions::Double::kOracle;
  if (a.identity_head) opts.track.test_double = TrackOptions::Double::kIdentity;
  EvalReport report = evaluate(loaded.model, dataset, opts);
  std::ofstream out(a.report);
  if (!out) throw IoError("cannot write report " + a.report);
  out << report_to_json(report) << "\n";
  std::printf("mean success %.2f precision %.2f over %zu sequences -> %s\n",
              report.mean_success, report.mean_precision, dataset.size(),
              a.report.c_str());
  return 0;
}

struct ExpertsArgs {
  std::string data;
  std::string ckpt;
  std::string out;
  std::string split = "heldout";
  int jobs = 1;
};

int cmd_experts(const ExpertsArgs& a) {
  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  if (loaded.model.config().moge_layers.empty() || !loaded.model.config().use_moge)
    throw ConfigError("experts: checkpoint model has no moge layers");
  const std::vector<Sequence> dataset =
      read_dataset_split(fs::path(a.data) / a.split);
  EvalOptions opts;
  opts.jobs = a.jobs;
  EvalReport report = evaluate(loaded.model, dataset, opts);
  std::ofstream out(a.out);
  if (!out) throw IoError("cannot write " + a.out);
  out << histogram_to_csv(report.expert_activation);
  std::cout << "expert activation histogram -> " << a.out << "\n";
  return 0;
}

struct CountArgs {
  std::string config;
  std::string preset;
};

int cmd_count_params(const CountArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = run_config_from_file(a.config);
  else if (a.preset == "large") cfg.model = ModelConfig::large();
  else if (a.preset == "micro") cfg.model = ModelConfig::micro();
  else cfg.model = ModelConfig::desk();
  Model model(cfg.model);
  std::printf("tunable parameters: %lld (closed form %lld)\n", count_tunable(model),
              count_tunable_closed_form(cfg.model));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"category-agnostic 3d point-cloud single object tracker"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "dataset seed");
  synth_cmd->add_option("--preset", synth.preset, "dataset preset (desk)");
  synth_cmd->add_option("--train-per-category", synth.train_per_category);
  synth_cmd->add_option("--heldout-per-category", synth.heldout_per_category);
  synth_cmd->add_option("--length", synth.length, "frames per sequence");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a tracker");
  train_cmd->add_option("--data", train_args.data, "dataset directory")->required();
  train_cmd->add_option("--config", train_args.config, "run config json");
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--loss-log", train_args.loss_log, "loss csv path");
  train_cmd->add_option("--init", train_args.init, "initial checkpoint to load");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_args.data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--report", eval_args.report, "report json path")->required();
  eval_cmd->add_option("--split", eval_args.split, "dataset split (train|heldout)");
  eval_cmd->add_flag("--oracle-head", eval_args.oracle_head,
                     "harness self-check: predictions equal ground truth");
  eval_cmd->add_flag("--identity-head", eval_args.identity_head,
                     "harness self-check: predictions repeat the first box");
  eval_cmd->add_option("--jobs", eval_args.jobs, "parallel sequences");

  ExpertsArgs experts_args;
  auto* experts_cmd = app.add_subcommand("experts", "dump expert activation csv");
  experts_cmd->add_option("--data", experts_args.data)->required();
  experts_cmd->add_option("--ckpt", experts_args.ckpt)->required();
  experts_cmd->add_option("--out", experts_args.out)->required();
  experts_cmd->add_option("--split", experts_args.split);
  experts_cmd->add_option("--jobs", experts_args.jobs);

  CountArgs count_args;
  auto* count_cmd = app.add_subcommand("count-params", "report tunable parameter count");
  count_cmd->add_option("--config", count_args.config);
  count_cmd->add_option("--preset", count_args.preset, "desk|large|micro");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*experts_cmd) return cmd_experts(experts_args);
    if (*count_cmd) return cmd_count_params(count_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const EmptyInputError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pcsot
