#include "blosa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace blosa {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void require_step(double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
}

template <typename Scalar>
Scalar scalar_of(const Var<Scalar>& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("finite_difference_check", "loss must be a scalar, got " +
                                                    shape_string(loss.shape()));
  }
  return loss.value()[0];
}

void update(GradCheckReport& report, double analytic, double numeric, const std::string& param,
            Index index) {
  const double err = relative_error(analytic, numeric);
  ++report.coordinates;
  report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
  if (err > report.max_rel_error || report.worst_index < 0) {
    report.max_rel_error = std::max(report.max_rel_error, err);
    report.worst_param = param;
    report.worst_index = index;
    report.analytic = analytic;
    report.numeric = numeric;
  }
}

}  // namespace

template <typename Scalar>
GradCheckReport finite_difference_check(const TensorLoss<Scalar>& f, const Tensor<Scalar>& theta,
                                        double step) {
  require_step(step);
  auto evaluate = [&](const Tensor<Scalar>& t) {
    Graph<Scalar> g;
    return scalar_of(f(g, variable(g, t)));
  };

  Graph<Scalar> g;
  const Var<Scalar> leaf = variable(g, theta);
  const Var<Scalar> loss = f(g, leaf);
  const Scalar base = scalar_of(loss);
  if (evaluate(theta) != base) {
    throw NonDeterministicError("finite_difference_check: two evaluations at the same point differ");
  }
  const Gradients<Scalar> grads = g.backward(loss.id());
  const Tensor<Scalar> analytic =
      grads.has(leaf.id()) ? grads[leaf.id()] : Tensor<Scalar>(theta.shape());

  GradCheckReport report;
  Tensor<Scalar> probe = theta;
  const Scalar h = static_cast<Scalar>(step);
  for (Index i = 0; i < theta.size(); ++i) {
    const Scalar saved = probe[i];
    probe[i] = saved + h;
    const double up = evaluate(probe);
    probe[i] = saved - h;
    const double down = evaluate(probe);
    probe[i] = saved;
    update(report, analytic[i], (up - down) / (2.0 * step), {}, i);
  }
  return report;
}

template <typename Scalar>
GradCheckReport finite_difference_check(const ModelLoss<Scalar>& f, ParamStore<Scalar>& store,
                                        double step) {
  require_step(step);
  auto evaluate = [&]() {
    Graph<Scalar> g;
    ParamBinder<Scalar> binder(g, store);
    return scalar_of(f(binder));
  };

  Graph<Scalar> g;
  ParamBinder<Scalar> binder(g, store);
  const Var<Scalar> loss = f(binder);
  const Scalar base = scalar_of(loss);
  if (evaluate() != base) {
    throw NonDeterministicError("finite_difference_check: two evaluations at the same point differ");
  }
  const GradMap<Scalar> analytic = binder.collect(g.backward(loss.id()));

  GradCheckReport report;
  const Scalar h = static_cast<Scalar>(step);
  for (auto& entry : store.entries()) {
    auto it = analytic.find(entry.path);
    Tensor<Scalar>& value = entry.value;
    for (Index i = 0; i < value.size(); ++i) {
      const Scalar saved = value[i];
      value[i] = saved + h;
      const double up = evaluate();
      value[i] = saved - h;
      const double down = evaluate();
      value[i] = saved;
      const double a = it == analytic.end() ? 0.0 : static_cast<double>(it->second[i]);
      update(report, a, (up - down) / (2.0 * step), entry.path, i);
    }
  }
  return report;
}

template GradCheckReport finite_difference_check(const TensorLoss<float>&, const Tensor<float>&, double);
template GradCheckReport finite_difference_check(const TensorLoss<double>&, const Tensor<double>&, double);
template GradCheckReport finite_difference_check(const ModelLoss<float>&, ParamStore<float>&, double);
template GradCheckReport finite_difference_check(const ModelLoss<double>&, ParamStore<double>&, double);

}  // namespace blosa
