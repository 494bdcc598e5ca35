#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eri/gradcheck_suite.hpp"
#include "eri/trainer.hpp"

namespace {

// Every RunConfig key is accepted as --key-with-dashes on every command.
const std::vector<std::string> kKeys{
    "data_dir",      "out_dir",          "checkpoint",      "split",           "report",
    "predictions",   "n_videos",         "signal_strength", "frame_dims",      "stage_channels",
    "blocks_per_stage", "strides",       "attention_heads", "attention_reduction", "lstm_hidden",
    "lstm_layers",   "descriptor_mode",  "loss",            "lr",              "batch_size",
    "epochs",        "steps",            "seed",            "freeze_extractor", "shuffle_labels",
    "label_norm",    "workers",          "extractor_threads", "scope"};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

struct CommandOptions {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::string positional_scope;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, CommandOptions& opts) {
  CLI::App* cmd = app.add_subcommand(name, help);
  cmd->add_option("--config", opts.config_file, "key=value file; flags override its entries");
  for (const auto& key : kKeys) cmd->add_option("--" + dashed(key), opts.flags[key]);
  return cmd;
}

eri::RunConfig build_config(const CLI::App& cmd, const CommandOptions& opts) {
  eri::RunConfig config;
  if (!opts.config_file.empty()) config.apply_file(opts.config_file);
  for (const auto& key : kKeys)
    if (cmd.count("--" + dashed(key)) > 0) config.set(key, opts.flags.at(key));
  if (!opts.positional_scope.empty()) config.set("scope", opts.positional_scope);
  return config;
}

int run_gradcheck(const eri::RunConfig& config) {
  std::vector<eri::GradCheckRow> rows;
  if (config.scope == "ops") rows = eri::gradcheck_ops(config.seed);
  else if (config.scope == "model") rows = eri::gradcheck_model(config);
  else throw eri::ConfigInvalid("gradcheck scope must be ops or model, got '" + config.scope + "'");
  std::cout << eri::format_gradcheck_table(rows);
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.passed();
  std::cout << (ok ? "all checks passed\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotional reaction intensity estimation: synthetic data, training, evaluation, gradient checks"};
  app.require_subcommand(1);
  CommandOptions synth_opts, train_opts, eval_opts, grad_opts;
  CLI::App* synth = add_command(app, "synth", "write a planted-signal synthetic dataset", synth_opts);
  CLI::App* train = add_command(app, "train", "train the regression head", train_opts);
  CLI::App* eval = add_command(app, "eval", "score a checkpoint or predictions file on a split", eval_opts);
  CLI::App* grad = add_command(app, "gradcheck", "finite-difference gradient suite", grad_opts);
  grad->add_option("scope_arg", grad_opts.positional_scope, "ops or model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      eri::cmd_synth(build_config(*synth, synth_opts), std::cout);
    } else if (train->parsed()) {
      eri::cmd_train(build_config(*train, train_opts), std::cout);
    } else if (eval->parsed()) {
      eri::cmd_eval(build_config(*eval, eval_opts), std::cout);
    } else if (grad->parsed()) {
      return run_gradcheck(build_config(*grad, grad_opts));
    }
  } catch (const eri::ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const eri::BatchTooSmall& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
