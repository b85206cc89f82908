#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "blosa/blocks.hpp"
#include "blosa/cost_model.hpp"
#include "blosa/heads.hpp"
#include "blosa/profile.hpp"
#include "blosa/trainer.hpp"

using namespace blosa;

namespace {

// Flags that map one-to-one onto config keys; only flags given on the command
// line override the config file.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> flags;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    flags.emplace_back(flag, key);
    app->add_option(flag, values[key], help);
  }
  void apply_to(ConfigMap& kv, CLI::App* app) const {
    for (const auto& [flag, key] : flags) {
      if (app->count(flag) > 0) kv[key] = values.at(key);
    }
  }
};

std::vector<Index> parse_lengths(const std::string& text) {
  std::vector<Index> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stol(item));
  return out;
}

int run_blocklen(Index n, double mu, double sigma, Index batch, bool batched) {
  Index r = 0;
  Index len = n;
  if (batched) {
    r = select_block_length_batched(mu, sigma, batch);
    len = static_cast<Index>(std::ceil(sigma * std::sqrt(2.0 * std::log(static_cast<double>(batch))) + mu));
    std::cout << "length bound " << len << "\n";
  } else {
    if (n < 1) throw CLI::ValidationError("--n", "must be >= 1");
    r = select_block_length(n);
  }
  const BlockPlan plan = BlockPlan::make(len, std::min(r, len));
  std::cout << "r " << r << "\n" << "m " << plan.m << "\n";
  std::cout << "r,m,xi\n";
  for (Index cand = r - 1; cand <= r + 1; ++cand) {
    if (cand < 1 || cand > len) continue;
    std::cout << cand << ',' << BlockPlan::make(len, cand).m << ',' << xi(len, cand) << '\n';
  }
  const Index best = brute_force_block_length(len);
  std::cout << "optimum r " << best << " xi " << xi(len, best) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-directional block self-attention toolkit"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a classifier on a synthetic task");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "key=value config file");
  Overrides train_over;
  train_over.add(train_cmd, "--seed", "seed", "random seed");
  train_over.add(train_cmd, "--task", "task", "order_pair|copy_class|parity");
  train_over.add(train_cmd, "--vocab", "vocab", "vocabulary size");
  train_over.add(train_cmd, "--mu", "len_mu", "mean sequence length");
  train_over.add(train_cmd, "--sigma", "len_sigma", "sequence length std deviation");
  train_over.add(train_cmd, "--classes", "classes", "class count (copy_class)");
  train_over.add(train_cmd, "--n-train", "n_train", "training examples");
  train_over.add(train_cmd, "--n-val", "n_val", "validation examples");
  train_over.add(train_cmd, "--d-e", "d_e", "embedding width");
  train_over.add(train_cmd, "--d-h", "d_h", "hidden width");
  train_over.add(train_cmd, "--r", "r", "block length: auto or an integer");
  train_over.add(train_cmd, "--arch", "arch", "bi_blosan|unmasked|s2t_only|full_san");
  train_over.add(train_cmd, "--keep-prob", "keep_prob", "dropout keep probability");
  train_over.add(train_cmd, "--batch", "batch", "batch size");
  train_over.add(train_cmd, "--steps", "steps", "optimizer steps");
  train_over.add(train_cmd, "--eval-every", "eval_every", "steps between validations");
  train_over.add(train_cmd, "--gamma", "gamma", "L2 weight");
  train_over.add(train_cmd, "--optimizer", "optimizer", "adadelta|adam");
  train_over.add(train_cmd, "--lr", "lr", "learning rate (0 = optimizer default)");
  train_over.add(train_cmd, "--out", "out", "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "validation accuracy of a saved model");
  std::string model_path;
  eval_cmd->add_option("--model", model_path, "model container")->required();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "memory and time scaling sweep");
  std::string lengths_text = "64,128,192,256,320,384,448,512";
  std::string bench_r = "auto";
  std::string bench_out = ".";
  std::string kinds_text = "biblosa,full_san";
  ProfileOptions popt;
  popt.repeats = 5;
  bench_cmd->add_option("--lengths", lengths_text, "comma-separated ascending lengths");
  bench_cmd->add_option("--d-e", popt.d_e, "feature width");
  bench_cmd->add_option("--r", bench_r, "block length: auto or an integer");
  bench_cmd->add_option("--repeats", popt.repeats, "timed repeats per run (>= 3)");
  bench_cmd->add_option("--seed", popt.seed, "random seed");
  bench_cmd->add_option("--kinds", kinds_text, "comma-separated: biblosa,full_san");
  bench_cmd->add_option("--out", bench_out, "output directory for bench.csv");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of encoder + NLI head");
  NliCheckOptions gopt;
  grad_cmd->add_option("--seed", gopt.seed, "random seed");
  grad_cmd->add_option("--n", gopt.n_premise, "premise length");
  grad_cmd->add_option("--d-e", gopt.d_e, "embedding width");
  grad_cmd->add_option("--d-h", gopt.d_h, "hidden width");
  grad_cmd->add_option("--r", gopt.block_len, "block length");
  grad_cmd->add_option("--step", gopt.step, "finite-difference step");

  // blocklen
  auto* block_cmd = app.add_subcommand("blocklen", "memory-optimal block length");
  Index bl_n = 0;
  double bl_mu = 0, bl_sigma = 0;
  Index bl_batch = 64;
  auto* n_opt = block_cmd->add_option("--n", bl_n, "sequence length");
  auto* mu_opt = block_cmd->add_option("--mu", bl_mu, "mean length");
  block_cmd->add_option("--sigma", bl_sigma, "length std deviation");
  block_cmd->add_option("--batch", bl_batch, "batch size");
  n_opt->excludes(mu_opt);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      ConfigMap kv;
      if (!config_path.empty()) kv = read_config_file(config_path);
      train_over.apply_to(kv, train_cmd);
      RunConfig cfg;
      cfg.apply(kv);
      const TrainResult res = train(cfg, &std::cout);
      std::cout << "best val_acc " << res.best_val_acc << " at step " << res.best_step << "\n"
                << "final val_acc " << res.final_val_acc << "\n"
                << "metrics " << res.metrics_path << "\nmodel " << res.model_path << "\n";
    } else if (eval_cmd->parsed()) {
      const LoadedModel model = load_classifier(model_path);
      const Dataset data = generate_task(model.config.task, model.config.seed);
      std::cout << "val_acc " << evaluate(model.params, model.config, data.val) << "\n";
    } else if (bench_cmd->parsed()) {
      popt.r = bench_r == "auto" ? 0 : std::stol(bench_r);
      std::vector<BenchKind> kinds;
      std::istringstream ks(kinds_text);
      for (std::string k; std::getline(ks, k, ',');) kinds.push_back(parse_bench_kind(k));
      const ScalingResult res = scaling_experiment(parse_lengths(lengths_text), kinds, popt);
      std::filesystem::create_directories(bench_out);
      const auto csv_path = (std::filesystem::path(bench_out) / "bench.csv").string();
      std::ofstream csv(csv_path);
      write_profile_csv(csv, res.records);
      write_profile_csv(std::cout, res.records);
      for (const auto& [kind, slope] : res.memory_slope) {
        std::cout << "memory slope " << bench_kind_name(kind) << ' ' << slope << "\n";
      }
      std::cout << "csv " << csv_path << "\n";
    } else if (grad_cmd->parsed()) {
      const GradCheckReport rep = nli_model_gradcheck(gopt);
      std::cout << "coordinates " << rep.coordinates << "\n"
                << "max absolute error " << rep.max_abs_error << "\n"
                << "max relative error " << rep.max_rel_error << " at " << rep.worst_param << '['
                << rep.worst_index << "] analytic " << rep.analytic << " numeric " << rep.numeric << "\n";
      return rep.max_rel_error < 1e-4 ? 0 : 1;
    } else if (block_cmd->parsed()) {
      return run_blocklen(bl_n, bl_mu, bl_sigma, bl_batch, mu_opt->count() > 0);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
