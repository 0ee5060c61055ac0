#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "deepca/config.hpp"
#include "deepca/errors.hpp"
#include "deepca/experiments.hpp"

namespace {

namespace fs = std::filesystem;
using deepca::config::json;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--iters", args.iterations, "override the unroll depth T");
}

json load_config(const CommonArgs& args, const std::string& verb) {
  json cfg = args.config_path.empty() ? json::object()
                                      : deepca::config::parse_file(args.config_path);
  if (args.seed != 0) {
    cfg["run"]["seeds"] = json::array({args.seed});
    if (cfg.contains("train")) cfg["train"]["seed"] = args.seed;
    if (cfg.contains("data")) cfg["data"]["seed"] = args.seed;
  }
  if (args.iterations != 0) {
    cfg["run"]["T_list"] = json::array({args.iterations});
    if (cfg.contains("train")) cfg["train"]["T"] = args.iterations;
  }
  if (args.out_dir.empty() && cfg.contains("run") && cfg["run"].contains("out")) {
    return cfg;
  }
  (void)verb;
  return cfg;
}

fs::path resolve_out(const CommonArgs& args, const json& cfg, const std::string& verb) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (cfg.contains("run") && cfg.at("run").contains("out")) {
    return cfg.at("run").at("out").get<std::string>();
  }
  return fs::path("runs") / verb;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deepca: constrained multilayer reconstruction models with unrolled "
               "alternating-direction inference"};
  app.require_subcommand(1);

  CommonArgs gradcheck_args, ea_args, sparsity_args, inpaint_args, train_args, eval_args;

  auto* cmd_gradcheck =
      app.add_subcommand("gradcheck", "compare unrolled-graph gradients to finite differences");
  add_common(cmd_gradcheck, gradcheck_args, false);

  auto* cmd_ea = app.add_subcommand("demo-explaining-away",
                                    "feed-forward thresholding vs optimized sparse codes");
  add_common(cmd_ea, ea_args);

  auto* cmd_sparsity =
      app.add_subcommand("demo-sparsity", "fixed vs learnable bias reconstruction sweep");
  add_common(cmd_sparsity, sparsity_args);

  auto* cmd_inpaint =
      app.add_subcommand("demo-inpaint", "depth completion with hard output constraints");
  add_common(cmd_inpaint, inpaint_args);

  auto* cmd_train = app.add_subcommand("train", "train a model from a config");
  add_common(cmd_train, train_args);

  std::string infer_checkpoint, infer_input, infer_output, infer_trace;
  std::size_t infer_iters = 0;
  auto* cmd_infer = app.add_subcommand("infer", "run batch inference on a DCAT tensor");
  cmd_infer->add_option("--checkpoint", infer_checkpoint, "model checkpoint (DCAC)")->required();
  cmd_infer->add_option("--input", infer_input, "input tensor (DCAT)")->required();
  cmd_infer->add_option("--output", infer_output, "output tensor path (DCAT)")->required();
  cmd_infer->add_option("--iters", infer_iters, "unroll depth T (default: checkpoint value)");
  cmd_infer->add_option("--trace", infer_trace, "per-sweep residual trace CSV");

  std::string eval_checkpoint;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on configured data");
  add_common(cmd_eval, eval_args);
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint (DCAC)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gradcheck->parsed()) {
      const json cfg = load_config(gradcheck_args, "gradcheck");
      const auto result = deepca::experiments::run_gradcheck(
          cfg, resolve_out(gradcheck_args, cfg, "gradcheck"));
      std::cout << (result.pass ? "PASS" : "FAIL") << " worst_err=" << result.worst_err << "\n";
      return result.pass ? 0 : 1;
    }
    if (cmd_ea->parsed()) {
      const json cfg = load_config(ea_args, "demo-explaining-away");
      const auto result = deepca::experiments::run_demo_explaining_away(
          cfg, resolve_out(ea_args, cfg, "demo-explaining-away"));
      std::cout << result.wins << "/" << result.trials
                << " trials optimized strictly sparser at <= error\n";
      return 0;
    }
    if (cmd_sparsity->parsed()) {
      const json cfg = load_config(sparsity_args, "demo-sparsity");
      deepca::experiments::run_demo_sparsity(cfg, resolve_out(sparsity_args, cfg, "demo-sparsity"));
      std::cout << "done\n";
      return 0;
    }
    if (cmd_inpaint->parsed()) {
      const json cfg = load_config(inpaint_args, "demo-inpaint");
      deepca::experiments::run_demo_inpaint(cfg, resolve_out(inpaint_args, cfg, "demo-inpaint"));
      std::cout << "done\n";
      return 0;
    }
    if (cmd_train->parsed()) {
      const json cfg = load_config(train_args, "train");
      deepca::experiments::run_train(cfg, resolve_out(train_args, cfg, "train"));
      std::cout << "done\n";
      return 0;
    }
    if (cmd_infer->parsed()) {
      deepca::experiments::run_infer(infer_checkpoint, infer_input, infer_iters, infer_output,
                                     infer_trace);
      return 0;
    }
    if (cmd_eval->parsed()) {
      const json cfg = load_config(eval_args, "eval");
      const auto summary = deepca::experiments::run_eval(cfg, eval_checkpoint,
                                                         resolve_out(eval_args, cfg, "eval"));
      std::cout << "loss=" << summary.loss << " mae=" << summary.mae
                << " max_violation=" << summary.max_violation << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
