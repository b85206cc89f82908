#include "blosa/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace blosa {

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::adadelta ? "adadelta" : "adam";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adadelta") return OptimizerKind::adadelta;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

namespace {

template <typename Scalar>
Tensor<Scalar>& state_for(std::map<std::string, Tensor<Scalar>>& slots, const std::string& path,
                          const Shape& shape) {
  auto it = slots.find(path);
  if (it == slots.end()) it = slots.emplace(path, Tensor<Scalar>(shape)).first;
  return it->second;
}

template <typename Scalar>
void check_grad(const std::string& path, const Tensor<Scalar>& param, const Tensor<Scalar>& grad) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("optimizer step", "gradient for '" + path + "' has shape " +
                                           shape_string(grad.shape()) + ", parameter " +
                                           shape_string(param.shape()));
  }
}

}  // namespace

template <typename Scalar>
Adadelta<Scalar>::Adadelta(AdadeltaConfig cfg) : cfg_(cfg) {
  if (!(cfg.rho > 0 && cfg.rho < 1)) throw std::invalid_argument("Adadelta: rho must lie in (0, 1)");
  if (!(cfg.eps > 0)) throw std::invalid_argument("Adadelta: eps must be positive");
}

template <typename Scalar>
void Adadelta<Scalar>::step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads) {
  const Scalar rho = static_cast<Scalar>(cfg_.rho);
  const Scalar eps = static_cast<Scalar>(cfg_.eps);
  const Scalar lr = static_cast<Scalar>(cfg_.lr);
  for (auto& e : params.entries()) {
    const auto git = grads.find(e.path);
    if (git == grads.end()) continue;
    const Tensor<Scalar>& g = git->second;
    check_grad(e.path, e.value, g);
    Tensor<Scalar>& eg = state_for(sq_grad_, e.path, e.value.shape());
    Tensor<Scalar>& ed = state_for(sq_update_, e.path, e.value.shape());
    for (Index i = 0; i < g.size(); ++i) {
      eg[i] = rho * eg[i] + (1 - rho) * g[i] * g[i];
      const Scalar delta = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ed[i] = rho * ed[i] + (1 - rho) * delta * delta;
      e.value[i] += lr * delta;
    }
  }
}

template <typename Scalar>
Adam<Scalar>::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0)) throw std::invalid_argument("Adam: lr must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1)) {
    throw std::invalid_argument("Adam: betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0)) throw std::invalid_argument("Adam: eps must be positive");
}

template <typename Scalar>
void Adam<Scalar>::step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
  for (auto& e : params.entries()) {
    const auto git = grads.find(e.path);
    if (git == grads.end()) continue;
    const Tensor<Scalar>& g = git->second;
    check_grad(e.path, e.value, g);
    Tensor<Scalar>& m = state_for(m_, e.path, e.value.shape());
    Tensor<Scalar>& v = state_for(v_, e.path, e.value.shape());
    for (Index i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / c1;
      const double v_hat = static_cast<double>(v[i]) / c2;
      e.value[i] -= static_cast<Scalar>(cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
    }
  }
}

template <typename Scalar>
std::unique_ptr<Optimizer<Scalar>> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::adam) {
    AdamConfig cfg;
    cfg.lr = lr;
    return std::make_unique<Adam<Scalar>>(cfg);
  }
  AdadeltaConfig cfg;
  cfg.lr = lr;
  return std::make_unique<Adadelta<Scalar>>(cfg);
}

template class Adadelta<float>;
template class Adadelta<double>;
template class Adam<float>;
template class Adam<double>;
template std::unique_ptr<Optimizer<float>> make_optimizer(OptimizerKind, double);
template std::unique_ptr<Optimizer<double>> make_optimizer(OptimizerKind, double);

}  // namespace blosa
