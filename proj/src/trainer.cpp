#include "blosa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace blosa {

DivergenceError::DivergenceError(long step)
    : std::runtime_error("training diverged at step " + std::to_string(step) +
                         ": loss is not finite"),
      step_(step) {}

double TrainConfig::effective_lr() const {
  if (lr > 0) return lr;
  return optimizer == OptimizerKind::adam ? 1e-3 : 1.0;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

Index argmax(const Tensor<ModelScalar>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

ConfigMap parse_config(std::istream& is) {
  ConfigMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_config(is);
}

void RunConfig::apply(const ConfigMap& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "seed") seed = static_cast<std::uint64_t>(to_long(key, v));
    else if (key == "task") task.kind = parse_task(v);
    else if (key == "vocab") task.vocab = to_long(key, v);
    else if (key == "len_mu") task.len_mu = to_double(key, v);
    else if (key == "len_sigma") task.len_sigma = to_double(key, v);
    else if (key == "classes") task.classes = to_long(key, v);
    else if (key == "n_train") task.n_train = to_long(key, v);
    else if (key == "n_val") task.n_val = to_long(key, v);
    else if (key == "d_e") encoder.d_e = to_long(key, v);
    else if (key == "d_h") encoder.d_h = to_long(key, v);
    else if (key == "r") encoder.block_len = v == "auto" ? 0 : to_long(key, v);
    else if (key == "c") encoder.c = to_double(key, v);
    else if (key == "activation") encoder.activation = parse_activation(v);
    else if (key == "arch") encoder.arch = parse_arch(v);
    else if (key == "keep_prob") encoder.keep_prob = to_double(key, v);
    else if (key == "batch") train.batch = to_long(key, v);
    else if (key == "steps") train.steps = to_long(key, v);
    else if (key == "eval_every") train.eval_every = to_long(key, v);
    else if (key == "gamma") train.gamma = to_double(key, v);
    else if (key == "optimizer") train.optimizer = parse_optimizer(v);
    else if (key == "lr") train.lr = to_double(key, v);
    else if (key == "head_hidden") train.head_hidden = to_long(key, v);
    else if (key == "out") out_dir = v;
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  encoder.vocab = task.vocab;
  encoder.len_mu = task.len_mu;
  encoder.len_sigma = task.len_sigma;
  encoder.batch = train.batch;
}

ConfigMap RunConfig::to_map() const {
  return {
      {"seed", std::to_string(seed)},
      {"task", std::string(task_name(task.kind))},
      {"vocab", std::to_string(task.vocab)},
      {"len_mu", format_double(task.len_mu)},
      {"len_sigma", format_double(task.len_sigma)},
      {"classes", std::to_string(task.classes)},
      {"n_train", std::to_string(task.n_train)},
      {"n_val", std::to_string(task.n_val)},
      {"d_e", std::to_string(encoder.d_e)},
      {"d_h", std::to_string(encoder.d_h)},
      {"r", encoder.block_len == 0 ? "auto" : std::to_string(encoder.block_len)},
      {"c", format_double(encoder.c)},
      {"activation", std::string(activation_name(encoder.activation))},
      {"arch", std::string(arch_name(encoder.arch))},
      {"keep_prob", format_double(encoder.keep_prob)},
      {"batch", std::to_string(train.batch)},
      {"steps", std::to_string(train.steps)},
      {"eval_every", std::to_string(train.eval_every)},
      {"gamma", format_double(train.gamma)},
      {"optimizer", std::string(optimizer_name(train.optimizer))},
      {"lr", format_double(train.lr)},
      {"head_hidden", std::to_string(train.head_hidden)},
  };
}

void RunConfig::validate() const {
  task.validate();
  encoder.validate();
  if (encoder.vocab != task.vocab) throw std::invalid_argument("encoder vocabulary differs from task");
  if (encoder.len_mu != task.len_mu || encoder.len_sigma != task.len_sigma ||
      encoder.batch != train.batch) {
    throw std::invalid_argument("encoder length statistics differ from task; set them through apply()");
  }
  if (train.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (train.steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (train.eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (train.gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  if (train.head_hidden < 0) throw std::invalid_argument("head_hidden must be >= 0");
}

namespace {

Index classes_of(const RunConfig& cfg) {
  return cfg.task.kind == TaskKind::copy_class ? cfg.task.classes : 2;
}

Index head_hidden_of(const RunConfig& cfg) {
  return cfg.train.head_hidden > 0 ? cfg.train.head_hidden : cfg.encoder.output_dim();
}

}  // namespace

void init_classifier(ParamStore<ModelScalar>& store, const RunConfig& cfg, Rng& rng) {
  init_encoder(store, cfg.encoder, rng);
  init_mlp(store, "head", cfg.encoder.output_dim(), head_hidden_of(cfg), classes_of(cfg), rng);
}

Var<ModelScalar> classifier_logits(const std::vector<Index>& tokens, ParamBinder<ModelScalar>& p,
                                   const RunConfig& cfg, const DropoutContext& drop) {
  const Var<ModelScalar> s = biblosan_encode<ModelScalar>(tokens, p, cfg.encoder, drop);
  return mlp_head(s, MlpParams<ModelScalar>::bind(p, "head")).logits;
}

double evaluate(const ParamStore<ModelScalar>& store, const RunConfig& cfg,
                const std::vector<Example>& examples) {
  if (examples.empty()) return 0.0;
  Index correct = 0;
  for (const Example& ex : examples) {
    Graph<ModelScalar> g;
    ParamBinder<ModelScalar> binder(g, store);
    correct += argmax(classifier_logits(ex.tokens, binder, cfg).value()) == ex.label;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainResult train(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const Dataset data = generate_task(cfg.task, cfg.seed);
  if (data.train.empty()) throw std::invalid_argument("training split is empty");

  ParamStore<ModelScalar> store;
  Rng init_rng = substream(cfg.seed, "init");
  init_classifier(store, cfg, init_rng);
  const auto optimizer = make_optimizer<ModelScalar>(cfg.train.optimizer, cfg.train.effective_lr());

  std::filesystem::create_directories(cfg.out_dir);
  TrainResult result;
  result.metrics_path = (std::filesystem::path(cfg.out_dir) / "metrics.csv").string();
  result.model_path = (std::filesystem::path(cfg.out_dir) / "model.blosa").string();
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw std::runtime_error("cannot write '" + result.metrics_path + "'");
  metrics << "step,loss,val_acc\n";

  ParamStore<ModelScalar> best = store;
  result.best_val_acc = evaluate(store, cfg, data.val);
  result.final_val_acc = result.best_val_acc;
  metrics << 0 << ",," << format_double(result.best_val_acc) << '\n';

  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();
  long epoch = 0;
  const auto batch = static_cast<std::size_t>(cfg.train.batch);
  const double weight = 1.0 / static_cast<double>(batch);

  for (long step = 1; step <= cfg.train.steps; ++step) {
    GradMap<ModelScalar> total;
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < batch; ++k) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = substream(cfg.seed, "order", static_cast<std::uint64_t>(epoch++));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      const Example& ex = data.train[order[cursor++]];
      Rng drop_rng = substream(cfg.seed, "dropout",
                               static_cast<std::uint64_t>(step) * batch + k);
      const DropoutContext drop{true, cfg.encoder.keep_prob, &drop_rng};
      Graph<ModelScalar> g;
      ParamBinder<ModelScalar> binder(g, store);
      const Var<ModelScalar> logits = classifier_logits(ex.tokens, binder, cfg, drop);
      const Var<ModelScalar> loss =
          objective(cross_entropy(logits, ex.label), binder, cfg.train.gamma);
      loss_sum += loss.value()[0];
      accumulate(total, binder.collect(backward(g, loss.id())), static_cast<ModelScalar>(weight));
    }
    const double loss = loss_sum * weight;
    if (!std::isfinite(loss)) throw DivergenceError(step);
    optimizer->step(store, total);

    metrics << step << ',' << format_double(loss) << ',';
    if (step % cfg.train.eval_every == 0 || step == cfg.train.steps) {
      const double acc = evaluate(store, cfg, data.val);
      result.final_val_acc = acc;
      metrics << format_double(acc);
      if (acc > result.best_val_acc) {
        result.best_val_acc = acc;
        result.best_step = step;
        best = store;
      }
      if (progress) {
        *progress << "step " << step << " loss " << loss << " val_acc " << acc << std::endl;
      }
    }
    metrics << '\n';
  }
  metrics.flush();
  if (!metrics) throw std::runtime_error("failed writing '" + result.metrics_path + "'");
  save_model(result.model_path, cfg.to_map(), best);
  return result;
}

LoadedModel load_classifier(const std::string& path) {
  ModelFile<ModelScalar> file = load_model<ModelScalar>(path);
  LoadedModel out;
  out.config.apply(file.config);
  out.config.validate();
  out.params = std::move(file.params);
  return out;
}

}  // namespace blosa
