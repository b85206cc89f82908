#include "blosa/attention.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace blosa {

std::string_view mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::forward: return "forward";
    case MaskKind::backward: return "backward";
    case MaskKind::none: return "none";
  }
  return "none";
}

MaskKind parse_mask_kind(std::string_view name) {
  if (name == "forward" || name == "fw") return MaskKind::forward;
  if (name == "backward" || name == "bw") return MaskKind::backward;
  if (name == "none") return MaskKind::none;
  throw std::invalid_argument("unknown mask kind '" + std::string(name) + "'");
}

std::string_view activation_name(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
  }
  return "relu";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "elu") return Activation::elu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Mask::Mask(Index n, MaskKind kind) : n_(n), kind_(kind) {
  if (n < 1) throw std::invalid_argument("mask length must be >= 1, got " + std::to_string(n));
}

Mask build_mask(Index n, MaskKind kind) { return Mask(n, kind); }

bool Mask::allows(Index i, Index j) const {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("mask index out of range");
  switch (kind_) {
    case MaskKind::forward: return i < j;
    case MaskKind::backward: return i > j;
    case MaskKind::none: return true;
  }
  return false;
}

double Mask::entry(Index i, Index j) const {
  return allows(i, j) ? 0.0 : -std::numeric_limits<double>::infinity();
}

template <typename Scalar>
Tensor<Scalar> Mask::bias(const Validity& valid) const {
  if (!valid.empty() && static_cast<Index>(valid.size()) != n_) {
    throw ShapeError("mask", "validity has " + std::to_string(valid.size()) +
                                 " flags for length " + std::to_string(n_));
  }
  const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  auto ok = [&](Index t) { return valid.empty() || valid[static_cast<std::size_t>(t)]; };
  Tensor<Scalar> out({n_, n_});
  for (Index j = 0; j < n_; ++j) {
    for (Index i = 0; i < n_; ++i) {
      out(j, i) = (allows(i, j) && ok(i) && ok(j)) ? Scalar(0) : ninf;
    }
  }
  return out;
}

void AttnConfig::validate() const {
  if (d_e < 1 || d_h < 1) throw std::invalid_argument("attention dims must be >= 1");
  if (!(c > 0.0)) throw std::invalid_argument("masking scale c must be positive");
}

template <typename Scalar>
Var<Scalar> activate(const Var<Scalar>& x, Activation act) {
  switch (act) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::elu: return elu(x);
  }
  return relu(x);
}

// ----------------------------------------------------------- parameter sets

template <typename Scalar>
AdditiveParams<Scalar> AdditiveParams<Scalar>::bind(ParamBinder<Scalar>& p, const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/W2"), p(prefix + "/b1"), p(prefix + "/w"), p(prefix + "/b")};
}

template <typename Scalar>
MultiplicativeParams<Scalar> MultiplicativeParams<Scalar>::bind(ParamBinder<Scalar>& p,
                                                                const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/W2")};
}

template <typename Scalar>
Source2TokenParams<Scalar> Source2TokenParams<Scalar>::bind(ParamBinder<Scalar>& p,
                                                            const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/b1"), p(prefix + "/W"), p(prefix + "/b")};
}

template <typename Scalar>
Token2TokenParams<Scalar> Token2TokenParams<Scalar>::bind(ParamBinder<Scalar>& p,
                                                          const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/W2"), p(prefix + "/b1"), p(prefix + "/W"), p(prefix + "/b")};
}

template <typename Scalar>
MaskedAttnParams<Scalar> MaskedAttnParams<Scalar>::bind(ParamBinder<Scalar>& p,
                                                        const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/W2"), p(prefix + "/b1")};
}

template <typename Scalar>
void init_additive(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_q,
                   Index d_h, bool multi_dim, Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_e, d_h, rng), ParamRole::weight);
  store.add(prefix + "/W2", glorot_init<Scalar>(d_q, d_h, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d_h}), ParamRole::bias);
  if (multi_dim) {
    store.add(prefix + "/w", glorot_init<Scalar>(d_h, d_e, rng), ParamRole::weight);
    store.add(prefix + "/b", Tensor<Scalar>({d_e}), ParamRole::bias);
  } else {
    store.add(prefix + "/w", glorot_init<Scalar>(d_h, 1, rng), ParamRole::weight);
    store.add(prefix + "/b", Tensor<Scalar>(Shape{}), ParamRole::bias);
  }
}

template <typename Scalar>
void init_multiplicative(ParamStore<Scalar>& store, const std::string& prefix, Index d_e,
                         Index d_q, Index d_h, Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_e, d_h, rng), ParamRole::weight);
  store.add(prefix + "/W2", glorot_init<Scalar>(d_q, d_h, rng), ParamRole::weight);
}

template <typename Scalar>
void init_source2token(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_h,
                       Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_e, d_h, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d_h}), ParamRole::bias);
  store.add(prefix + "/W", glorot_init<Scalar>(d_h, d_e, rng), ParamRole::weight);
  store.add(prefix + "/b", Tensor<Scalar>({d_e}), ParamRole::bias);
}

template <typename Scalar>
void init_token2token(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_h,
                      Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_e, d_h, rng), ParamRole::weight);
  store.add(prefix + "/W2", glorot_init<Scalar>(d_e, d_h, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d_h}), ParamRole::bias);
  store.add(prefix + "/W", glorot_init<Scalar>(d_h, d_e, rng), ParamRole::weight);
  store.add(prefix + "/b", Tensor<Scalar>({d_e}), ParamRole::bias);
}

template <typename Scalar>
void init_masked_attention(ParamStore<Scalar>& store, const std::string& prefix, Index d_e,
                           Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_e, d_e, rng), ParamRole::weight);
  store.add(prefix + "/W2", glorot_init<Scalar>(d_e, d_e, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d_e}), ParamRole::bias);
}

// ------------------------------------------------------------- operations

namespace {

void require_sequence(std::string_view op, const Shape& shape) {
  if (shape.size() != 2 || shape[0] < 1) {
    throw ShapeError(std::string(op), "expects a non-empty [n, d] sequence, got " +
                                          shape_string(shape));
  }
}

void require_validity(std::string_view op, const Validity& valid, Index n) {
  if (valid.empty()) return;
  if (static_cast<Index>(valid.size()) != n) {
    throw ShapeError(std::string(op), "validity has " + std::to_string(valid.size()) +
                                          " flags for " + std::to_string(n) + " tokens");
  }
  if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) {
    throw std::invalid_argument(std::string(op) + ": every token is marked invalid");
  }
}

bool all_valid(const Validity& valid) {
  return std::all_of(valid.begin(), valid.end(), [](bool v) { return v; });
}

// [n] additive bias with -inf at invalid tokens.
template <typename Scalar>
Var<Scalar> token_bias(Graph<Scalar>& g, const Validity& valid) {
  Tensor<Scalar> t({static_cast<Index>(valid.size())});
  for (std::size_t i = 0; i < valid.size(); ++i) {
    t[static_cast<Index>(i)] = valid[i] ? Scalar(0) : -std::numeric_limits<Scalar>::infinity();
  }
  return constant(g, std::move(t), "validity");
}

// Contract per-query feature distributions P [n_j, d, n_i] with x [n_i, d].
template <typename Scalar>
Var<Scalar> contract(const Var<Scalar>& probs, const Var<Scalar>& x) {
  return sum(probs * transpose(x), 2);
}

}  // namespace

template <typename Scalar>
Var<Scalar> additive_compat(const Var<Scalar>& x, const Var<Scalar>& q,
                            const AdditiveParams<Scalar>& p, Activation act) {
  if (q.value().rank() != 1) throw ShapeError("additive_compat", "query must be a vector");
  const Var<Scalar> hidden = activate(matmul(x, p.W1) + (matmul(q, p.W2) + p.b1), act);
  Var<Scalar> scores = matmul(hidden, p.w);
  const bool vanilla = p.w.dim(1) == 1 && p.b.value().rank() == 0;
  if (vanilla) {
    scores = reshape(scores, x.value().rank() == 2 ? Shape{x.dim(0)} : Shape{});
  }
  return scores + p.b;
}

template <typename Scalar>
Var<Scalar> multiplicative_compat(const Var<Scalar>& x, const Var<Scalar>& q,
                                  const MultiplicativeParams<Scalar>& p) {
  if (q.value().rank() != 1) throw ShapeError("multiplicative_compat", "query must be a vector");
  const Var<Scalar> projected = matmul(x, p.W1);
  const Var<Scalar> query = matmul(q, p.W2);
  if (projected.shape().back() != query.shape().back()) {
    throw ShapeError("multiplicative_compat", "projections differ in width");
  }
  if (x.value().rank() == 1) return sum(projected * query);
  return sum(projected * query, 1);
}

template <typename Scalar>
Var<Scalar> attend(const Var<Scalar>& x, const Var<Scalar>& scores, const Validity& valid) {
  require_sequence("attend", x.shape());
  if (scores.shape() != Shape{x.dim(0)}) {
    throw ShapeError("attend", "scores " + shape_string(scores.shape()) + " for " +
                                   std::to_string(x.dim(0)) + " tokens");
  }
  require_validity("attend", valid, x.dim(0));
  Var<Scalar> logits = scores;
  if (!valid.empty() && !all_valid(valid)) logits = logits + token_bias(x.graph(), valid);
  return matmul(softmax(logits), x);
}

template <typename Scalar>
Var<Scalar> attend_features(const Var<Scalar>& x, const Var<Scalar>& scores,
                            const Validity& valid) {
  require_sequence("attend_features", x.shape());
  if (scores.shape() != x.shape()) {
    throw ShapeError("attend_features", "scores " + shape_string(scores.shape()) +
                                            " must match x " + shape_string(x.shape()));
  }
  require_validity("attend_features", valid, x.dim(0));
  Var<Scalar> logits = transpose(scores);
  if (!valid.empty() && !all_valid(valid)) logits = logits + token_bias(x.graph(), valid);
  const Var<Scalar> probs = softmax(logits);
  return sum(probs * transpose(x), 1);
}

template <typename Scalar>
Var<Scalar> vanilla_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                              const AdditiveParams<Scalar>& p, Activation act,
                              const Validity& valid) {
  require_sequence("vanilla_attention", x.shape());
  return attend(x, additive_compat(x, q, p, act), valid);
}

template <typename Scalar>
Var<Scalar> vanilla_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                              const MultiplicativeParams<Scalar>& p, const Validity& valid) {
  require_sequence("vanilla_attention", x.shape());
  return attend(x, multiplicative_compat(x, q, p), valid);
}

template <typename Scalar>
Var<Scalar> multi_dim_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                                const AdditiveParams<Scalar>& p, Activation act,
                                const Validity& valid) {
  require_sequence("multi_dim_attention", x.shape());
  return attend_features(x, additive_compat(x, q, p, act), valid);
}

template <typename Scalar>
Var<Scalar> source2token(const Var<Scalar>& x, const Source2TokenParams<Scalar>& p,
                         Activation act, const Validity& valid) {
  require_sequence("source2token", x.shape());
  const Var<Scalar> hidden = activate(linear(x, p.W1, p.b1), act);
  return attend_features(x, linear(hidden, p.W, p.b), valid);
}

template <typename Scalar>
Var<Scalar> token2token(const Var<Scalar>& x, const Token2TokenParams<Scalar>& p, Activation act,
                        const Validity& valid) {
  require_sequence("token2token", x.shape());
  const Index n = x.dim(0);
  const Index d_e = x.dim(1);
  require_validity("token2token", valid, n);
  const Index d_h = p.W1.dim(1);
  // [n_j, d_h, n_i] -> [n_j * n_i, d_h] so the output weight applies per pair.
  const Var<Scalar> pre = pairwise_add(linear(x, p.W1, p.b1), matmul(x, p.W2));
  const Var<Scalar> hidden = reshape(transpose(activate(pre, act)), {n * n, d_h});
  const Var<Scalar> scores =
      transpose(reshape(linear(hidden, p.W, p.b), {n, n, d_e}));
  Var<Scalar> logits = scores;
  if (!valid.empty() && !all_valid(valid)) {
    logits = mask_add(scores, constant(x.graph(), Mask(n, MaskKind::none).bias<Scalar>(valid)));
  }
  return contract(softmax(logits), x);
}

template <typename Scalar>
Var<Scalar> masked_self_attention(const Var<Scalar>& x, const Var<Scalar>& mask_bias,
                                  const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg) {
  require_sequence("masked_self_attention", x.shape());
  cfg.validate();
  const Index n = x.dim(0);
  if (mask_bias.shape() != Shape{n, n}) {
    throw ShapeError("masked_self_attention", "mask " + shape_string(mask_bias.shape()) +
                                                  " for " + std::to_string(n) + " tokens");
  }
  const Var<Scalar> pre = pairwise_add(linear(x, p.W1, p.b1), matmul(x, p.W2));
  const Var<Scalar> bounded = scale(tanh(scale(pre, 1.0 / cfg.c)), cfg.c);
  return contract(softmax(mask_add(bounded, mask_bias)), x);
}

template <typename Scalar>
Var<Scalar> masked_self_attention(const Var<Scalar>& x, const Mask& mask,
                                  const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg,
                                  const Validity& valid) {
  require_sequence("masked_self_attention", x.shape());
  if (mask.n() != x.dim(0)) {
    throw ShapeError("masked_self_attention", "mask length " + std::to_string(mask.n()) +
                                                  " for " + std::to_string(x.dim(0)) + " tokens");
  }
  if (!valid.empty() && static_cast<Index>(valid.size()) != mask.n()) {
    throw ShapeError("masked_self_attention", "validity length mismatch");
  }
  if (mask.kind() == MaskKind::none && all_valid(valid)) {
    cfg.validate();
    const Var<Scalar> pre = pairwise_add(linear(x, p.W1, p.b1), matmul(x, p.W2));
    const Var<Scalar> bounded = scale(tanh(scale(pre, 1.0 / cfg.c)), cfg.c);
    return contract(softmax(bounded), x);
  }
  return masked_self_attention(x, constant(x.graph(), mask.bias<Scalar>(valid), "mask"), p, cfg);
}

#define BLOSA_INSTANTIATE_ATTENTION(S)                                                          \
  template Tensor<S> Mask::bias<S>(const Validity&) const;                                      \
  template Var<S> activate(const Var<S>&, Activation);                                          \
  template struct AdditiveParams<S>;                                                            \
  template struct MultiplicativeParams<S>;                                                      \
  template struct Source2TokenParams<S>;                                                        \
  template struct Token2TokenParams<S>;                                                         \
  template struct MaskedAttnParams<S>;                                                          \
  template void init_additive(ParamStore<S>&, const std::string&, Index, Index, Index, bool,    \
                              Rng&);                                                            \
  template void init_multiplicative(ParamStore<S>&, const std::string&, Index, Index, Index,    \
                                    Rng&);                                                      \
  template void init_source2token(ParamStore<S>&, const std::string&, Index, Index, Rng&);      \
  template void init_token2token(ParamStore<S>&, const std::string&, Index, Index, Rng&);       \
  template void init_masked_attention(ParamStore<S>&, const std::string&, Index, Rng&);         \
  template Var<S> additive_compat(const Var<S>&, const Var<S>&, const AdditiveParams<S>&,       \
                                  Activation);                                                  \
  template Var<S> multiplicative_compat(const Var<S>&, const Var<S>&,                           \
                                        const MultiplicativeParams<S>&);                        \
  template Var<S> attend(const Var<S>&, const Var<S>&, const Validity&);                        \
  template Var<S> attend_features(const Var<S>&, const Var<S>&, const Validity&);               \
  template Var<S> vanilla_attention(const Var<S>&, const Var<S>&, const AdditiveParams<S>&,     \
                                    Activation, const Validity&);                               \
  template Var<S> vanilla_attention(const Var<S>&, const Var<S>&,                               \
                                    const MultiplicativeParams<S>&, const Validity&);           \
  template Var<S> multi_dim_attention(const Var<S>&, const Var<S>&, const AdditiveParams<S>&,   \
                                      Activation, const Validity&);                             \
  template Var<S> source2token(const Var<S>&, const Source2TokenParams<S>&, Activation,         \
                               const Validity&);                                                \
  template Var<S> token2token(const Var<S>&, const Token2TokenParams<S>&, Activation,           \
                              const Validity&);                                                 \
  template Var<S> masked_self_attention(const Var<S>&, const Var<S>&,                           \
                                        const MaskedAttnParams<S>&, const AttnConfig&);         \
  template Var<S> masked_self_attention(const Var<S>&, const Mask&, const MaskedAttnParams<S>&, \
                                        const AttnConfig&, const Validity&);

BLOSA_INSTANTIATE_ATTENTION(float)
BLOSA_INSTANTIATE_ATTENTION(double)

}  // namespace blosa
