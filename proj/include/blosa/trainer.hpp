#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "blosa/heads.hpp"
#include "blosa/optim.hpp"
#include "blosa/serialize.hpp"
#include "blosa/tasks.hpp"

namespace blosa {

/// Loss became NaN or infinite.
class DivergenceError : public std::runtime_error {
public:
  explicit DivergenceError(long step);
  long step() const noexcept { return step_; }

private:
  long step_;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.0;  // 0 picks the optimizer default (1.0 for Adadelta, 1e-3 for Adam)
  Index batch = 64;
  long steps = 2000;
  long eval_every = 125;
  double gamma = 0.0;
  Index head_hidden = 0;  // 0 uses the encoding width

  double effective_lr() const;
};

// Flat key=value run description. Keys: seed, task, vocab, len_mu, len_sigma,
// classes, n_train, n_val, d_e, d_h, r, c, activation, arch, keep_prob, batch,
// steps, eval_every, gamma, optimizer, lr, head_hidden, out.
struct RunConfig {
  std::uint64_t seed = 1;
  TaskSpec task;
  EncoderConfig encoder;
  TrainConfig train;
  std::string out_dir = ".";

  RunConfig() { apply({}); }

  /// Overrides fields from `kv`; unknown keys throw.
  void apply(const ConfigMap& kv);
  ConfigMap to_map() const;
  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
ConfigMap parse_config(std::istream& is);
ConfigMap read_config_file(const std::string& path);

using ModelScalar = float;

/// Encoder plus classification head ("head/*").
void init_classifier(ParamStore<ModelScalar>& store, const RunConfig& cfg, Rng& rng);

Var<ModelScalar> classifier_logits(const std::vector<Index>& tokens, ParamBinder<ModelScalar>& p,
                                   const RunConfig& cfg, const DropoutContext& drop = {});

/// Fraction of examples whose argmax logit (lowest index on ties) matches the label.
double evaluate(const ParamStore<ModelScalar>& store, const RunConfig& cfg,
                const std::vector<Example>& examples);

struct TrainResult {
  double best_val_acc = 0.0;
  long best_step = 0;
  double final_val_acc = 0.0;
  std::string model_path;
  std::string metrics_path;
};

/// Writes <out>/metrics.csv (step,loss,val_acc) and the best-validation
/// checkpoint <out>/model.blosa. Step 0 evaluates the initial model.
TrainResult train(const RunConfig& cfg, std::ostream* progress = nullptr);

struct LoadedModel {
  RunConfig config;
  ParamStore<ModelScalar> params;
};

LoadedModel load_classifier(const std::string& path);

}  // namespace blosa
