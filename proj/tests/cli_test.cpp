#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "blosa/serialize.hpp"
#include "blosa/tasks.hpp"
#include "blosa/trainer.hpp"
#include "test_util.hpp"

using namespace blosa;
using blosa::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("blosa_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig cfg;
  cfg.apply({{"vocab", "8"}, {"len_mu", "8"}, {"len_sigma", "2"}, {"n_train", "64"},
             {"n_val", "32"}, {"d_e", "8"}, {"d_h", "8"}, {"batch", "8"}, {"steps", "6"},
             {"eval_every", "3"}, {"out", out.string()}});
  return cfg;
}

}  // namespace

TEST(Tasks, GenerationIsDeterministic) {
  TaskSpec spec;
  spec.n_train = 200;
  spec.n_val = 50;
  const auto a = generate_task(spec, 3);
  const auto b = generate_task(spec, 3);
  ASSERT_EQ(a.train.size(), 200u);
  ASSERT_EQ(a.val.size(), 50u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].tokens, b.train[i].tokens);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  EXPECT_NE(generate_task(spec, 4).train[0].tokens, a.train[0].tokens);
}

TEST(Tasks, OrderPairLabels) {
  TaskSpec spec;
  EXPECT_EQ(label_of(spec, {kTokenA, kTokenB}), 1);
  EXPECT_EQ(label_of(spec, {kTokenB, kTokenA}), 0);
  EXPECT_EQ(label_of(spec, {5, kTokenA, 7, kTokenB}), 1);
}

TEST(Tasks, OrderPairExamplesAreWellFormed) {
  TaskSpec spec;
  spec.n_train = 10000;
  spec.n_val = 10;
  const auto d = generate_task(spec, 5);
  Index positives = 0;
  for (const auto& ex : d.train) {
    int a = 0, b = 0;
    for (Index t : ex.tokens) {
      a += t == kTokenA;
      b += t == kTokenB;
      EXPECT_LT(t, spec.vocab);
    }
    EXPECT_EQ(a, 1);
    EXPECT_EQ(b, 1);
    EXPECT_EQ(ex.label, label_of(spec, ex.tokens));
    positives += ex.label;
  }
  const double rate = static_cast<double>(positives) / static_cast<double>(d.train.size());
  EXPECT_GE(rate, 0.45);
  EXPECT_LE(rate, 0.55);
}

TEST(Tasks, SplitsAreDisjoint) {
  TaskSpec spec;
  spec.n_train = 2000;
  spec.n_val = 500;
  const auto d = generate_task(spec, 6);
  std::set<std::vector<Index>> train;
  for (const auto& ex : d.train) train.insert(ex.tokens);
  for (const auto& ex : d.val) EXPECT_FALSE(train.contains(ex.tokens));
}

TEST(Tasks, OtherRules) {
  TaskSpec copy;
  copy.kind = TaskKind::copy_class;
  copy.classes = 3;
  EXPECT_EQ(label_of(copy, {7, 1, 2}), 1);
  TaskSpec parity;
  parity.kind = TaskKind::parity;
  EXPECT_EQ(label_of(parity, {kTokenA, 4, kTokenA, kTokenA}), 1);
  EXPECT_EQ(label_of(parity, {kTokenA, kTokenA}), 0);
}

TEST(Tasks, ValidationRejectsBadSpecs) {
  TaskSpec spec;
  spec.len_mu = 1.5;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = {};
  spec.vocab = 3;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  EXPECT_EQ(parse_task(task_name(TaskKind::parity)), TaskKind::parity);
}

TEST(Config, ParsesKeyValueLines) {
  std::istringstream is("# run\nseed = 9\n\n  arch=s2t_only  # ablation\nsteps = 10\n");
  const auto kv = parse_config(is);
  EXPECT_EQ(kv.at("seed"), "9");
  EXPECT_EQ(kv.at("arch"), "s2t_only");
  RunConfig cfg;
  cfg.apply(kv);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.encoder.arch, EncoderArch::s2t_only);
  EXPECT_EQ(cfg.train.steps, 10);
}

TEST(Config, UnknownKeyAndBadLineThrow) {
  RunConfig cfg;
  EXPECT_THROW(cfg.apply({{"colour", "red"}}), std::invalid_argument);
  std::istringstream bad("just words\n");
  EXPECT_THROW(parse_config(bad), std::invalid_argument);
}

TEST(Config, DirectFieldEditsMustStayConsistent) {
  RunConfig cfg;
  cfg.validate();
  cfg.task.len_mu = 30;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Config, MapRoundTrip) {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.encoder.c = 3.5;
  cfg.train.optimizer = OptimizerKind::adadelta;
  cfg.train.gamma = 1e-4;
  RunConfig back;
  back.apply(cfg.to_map());
  EXPECT_EQ(back.to_map(), cfg.to_map());
  EXPECT_EQ(back.train.optimizer, OptimizerKind::adadelta);
  EXPECT_EQ(back.encoder.c, 3.5);
}

TEST(Serialize, ShortestRoundTripFormatting) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  for (double v : {1.0 / 3.0, 1e-300, -2.5e17, 0.578125}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Serialize, ModelRoundTripIsBitExact) {
  ParamStore<float> store;
  store.add("enc/W", random_tensor({3, 4}, 1).cast<float>(), ParamRole::weight);
  store.add("enc/b", random_tensor({4}, 2).cast<float>(), ParamRole::bias);
  store.add("temp", Tensor<float>::scalar(0.25f), ParamRole::weight);
  const ConfigMap config{{"d_h", "4"}, {"arch", "bi_blosan"}};
  std::stringstream ss;
  write_model(ss, config, store);
  const auto back = read_model<float>(ss);
  EXPECT_EQ(back.config, config);
  ASSERT_EQ(back.params.size(), store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& a = store.entries()[i];
    const auto& b = back.params.entries()[i];
    EXPECT_EQ(a.path, b.path);
    EXPECT_EQ(a.role, b.role);
    EXPECT_EQ(a.value.shape(), b.value.shape());
    EXPECT_EQ(std::memcmp(a.value.data(), b.value.data(), sizeof(float) * a.value.size()), 0);
  }
}

TEST(Serialize, RejectsWrongDtypeAndTruncation) {
  ParamStore<float> store;
  store.add("w", random_tensor({2, 2}, 3).cast<float>(), ParamRole::weight);
  std::stringstream ss;
  write_model(ss, {}, store);
  const std::string bytes = ss.str();
  std::istringstream as_double(bytes);
  EXPECT_THROW(read_model<double>(as_double), FormatError);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_model<float>(truncated), FormatError);
  std::istringstream garbage("not a model\n");
  EXPECT_THROW(read_model<float>(garbage), FormatError);
}

TEST(Train, ZeroStepsStillSavesTheInitialModel) {
  const auto dir = scratch_dir("zero");
  auto cfg = tiny_run(dir);
  cfg.train.steps = 0;
  const auto res = train(cfg);
  EXPECT_TRUE(fs::exists(res.model_path));
  EXPECT_EQ(res.best_step, 0);
  const auto loaded = load_classifier(res.model_path);
  const auto data = generate_task(cfg.task, cfg.seed);
  EXPECT_EQ(evaluate(loaded.params, loaded.config, data.val), res.best_val_acc);
  fs::remove_all(dir);
}

TEST(Train, RunsAreReproducibleAndCheckpointsReload) {
  const auto d1 = scratch_dir("rep1");
  const auto d2 = scratch_dir("rep2");
  const auto r1 = train(tiny_run(d1));
  const auto r2 = train(tiny_run(d2));
  const std::string m1 = read_file(r1.metrics_path);
  EXPECT_EQ(m1, read_file(r2.metrics_path));
  EXPECT_EQ(m1.substr(0, m1.find('\n')), "step,loss,val_acc");
  EXPECT_EQ(read_file(r1.model_path), read_file(r2.model_path));

  const auto loaded = load_classifier(r1.model_path);
  EXPECT_EQ(loaded.config.to_map(), tiny_run(d1).to_map());
  const auto data = generate_task(loaded.config.task, loaded.config.seed);
  EXPECT_EQ(evaluate(loaded.params, loaded.config, data.val), r1.best_val_acc);
  fs::remove_all(d1);
  fs::remove_all(d2);
}
