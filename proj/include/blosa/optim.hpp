#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "blosa/param_store.hpp"

namespace blosa {

enum class OptimizerKind { adadelta, adam };

std::string_view optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;  // multiplies the update; 1 is the plain recurrence
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Updates parameters in place from a gradient map keyed by path. Parameters
// missing from the map are left untouched. Accumulators are created on first
// use, zero-filled and shaped like their parameter.
template <typename Scalar>
class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads) = 0;
  virtual OptimizerKind kind() const = 0;
};

template <typename Scalar>
class Adadelta final : public Optimizer<Scalar> {
public:
  explicit Adadelta(AdadeltaConfig cfg = {});
  void step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads) override;
  OptimizerKind kind() const override { return OptimizerKind::adadelta; }

  const Tensor<Scalar>& mean_sq_grad(const std::string& path) const { return sq_grad_.at(path); }
  const Tensor<Scalar>& mean_sq_update(const std::string& path) const { return sq_update_.at(path); }

private:
  AdadeltaConfig cfg_;
  std::map<std::string, Tensor<Scalar>> sq_grad_;
  std::map<std::string, Tensor<Scalar>> sq_update_;
};

template <typename Scalar>
class Adam final : public Optimizer<Scalar> {
public:
  explicit Adam(AdamConfig cfg = {});
  void step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads) override;
  OptimizerKind kind() const override { return OptimizerKind::adam; }
  long steps() const noexcept { return t_; }

private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Tensor<Scalar>> m_;
  std::map<std::string, Tensor<Scalar>> v_;
};

/// Adadelta uses `lr` as its update multiplier, Adam as its step size.
template <typename Scalar>
std::unique_ptr<Optimizer<Scalar>> make_optimizer(OptimizerKind kind, double lr);

}  // namespace blosa
