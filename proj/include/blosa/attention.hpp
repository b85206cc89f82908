#pragma once

#include <string>
#include <vector>

#include "blosa/init.hpp"
#include "blosa/param_store.hpp"

// Attention lineage on token-major sequences: a sequence of n tokens with d
// features is an [n, d] tensor (row i is token i). Single vectors are rank 1.
// Weights are stored [in, out] so a layer reads `x * W + b`.

namespace blosa {

enum class MaskKind { forward, backward, none };
enum class Activation { relu, tanh, elu };

std::string_view mask_kind_name(MaskKind kind);
MaskKind parse_mask_kind(std::string_view name);
std::string_view activation_name(Activation act);
Activation parse_activation(std::string_view name);

/// Per-token validity; empty means every token is valid.
using Validity = std::vector<bool>;

// Directional mask. entry(i, j) is the additive bias for query j attending to
// token i: forward admits i < j, backward admits i > j, none admits all. The
// diagonal is excluded by both directional kinds.
class Mask {
public:
  Mask(Index n, MaskKind kind);

  Index n() const noexcept { return n_; }
  MaskKind kind() const noexcept { return kind_; }
  bool allows(Index i, Index j) const;
  double entry(Index i, Index j) const;

  /// [n_j, n_i] additive bias laid out for `mask_add`; invalid tokens are
  /// removed both as attendees and as queries.
  template <typename Scalar>
  Tensor<Scalar> bias(const Validity& valid = {}) const;

private:
  Index n_;
  MaskKind kind_;
};

Mask build_mask(Index n, MaskKind kind);

struct AttnConfig {
  Index d_e = 1;
  Index d_h = 1;
  double c = 5.0;
  Activation activation = Activation::relu;
  bool multi_dim = true;

  void validate() const;
};

template <typename Scalar>
Var<Scalar> activate(const Var<Scalar>& x, Activation act);

// ----------------------------------------------------------- parameter sets

/// f(x_i, q) = w^T act(W1 x_i + W2 q + b1) + b; w becomes a matrix W when multi-dim.
template <typename Scalar>
struct AdditiveParams {
  Var<Scalar> W1, W2, b1, w, b;
  static AdditiveParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

/// f(x_i, q) = <W1 x_i, W2 q>
template <typename Scalar>
struct MultiplicativeParams {
  Var<Scalar> W1, W2;
  static MultiplicativeParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
struct Source2TokenParams {
  Var<Scalar> W1, b1, W, b;
  static Source2TokenParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
struct Token2TokenParams {
  Var<Scalar> W1, W2, b1, W, b;
  static Token2TokenParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

/// Masked self-attention: the output weight is the fixed scalar c.
template <typename Scalar>
struct MaskedAttnParams {
  Var<Scalar> W1, W2, b1;
  static MaskedAttnParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
void init_additive(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_q,
                   Index d_h, bool multi_dim, Rng& rng);
template <typename Scalar>
void init_multiplicative(ParamStore<Scalar>& store, const std::string& prefix, Index d_e,
                         Index d_q, Index d_h, Rng& rng);
template <typename Scalar>
void init_source2token(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_h,
                       Rng& rng);
template <typename Scalar>
void init_token2token(ParamStore<Scalar>& store, const std::string& prefix, Index d_e, Index d_h,
                      Rng& rng);
template <typename Scalar>
void init_masked_attention(ParamStore<Scalar>& store, const std::string& prefix, Index d_e,
                           Rng& rng);

// ------------------------------------------------------------- operations

/// x: [n, d_e] or [d_e]; q: [d_q]. Scores [n] (vanilla) or [n, d_e] (multi-dim);
/// a rank-1 x gives a scalar or a [d_e] vector.
template <typename Scalar>
Var<Scalar> additive_compat(const Var<Scalar>& x, const Var<Scalar>& q,
                            const AdditiveParams<Scalar>& p, Activation act = Activation::relu);

/// Scores [n] for x [n, d_e]; a scalar for x [d_e].
template <typename Scalar>
Var<Scalar> multiplicative_compat(const Var<Scalar>& x, const Var<Scalar>& q,
                                  const MultiplicativeParams<Scalar>& p);

/// s = sum_i softmax(scores)_i x_i with scores [n].
template <typename Scalar>
Var<Scalar> attend(const Var<Scalar>& x, const Var<Scalar>& scores, const Validity& valid = {});

/// s = sum_i P_.i (.) x_i where P [d_e, n] is the per-feature softmax of scores [n, d_e].
template <typename Scalar>
Var<Scalar> attend_features(const Var<Scalar>& x, const Var<Scalar>& scores,
                            const Validity& valid = {});

template <typename Scalar>
Var<Scalar> vanilla_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                              const AdditiveParams<Scalar>& p, Activation act = Activation::relu,
                              const Validity& valid = {});
template <typename Scalar>
Var<Scalar> vanilla_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                              const MultiplicativeParams<Scalar>& p, const Validity& valid = {});

template <typename Scalar>
Var<Scalar> multi_dim_attention(const Var<Scalar>& x, const Var<Scalar>& q,
                                const AdditiveParams<Scalar>& p, Activation act = Activation::relu,
                                const Validity& valid = {});

/// [n, d_e] -> [d_e]. Throws when every token is invalid.
template <typename Scalar>
Var<Scalar> source2token(const Var<Scalar>& x, const Source2TokenParams<Scalar>& p,
                         Activation act = Activation::relu, const Validity& valid = {});

/// [n, d_e] -> [n, d_e], unmasked.
template <typename Scalar>
Var<Scalar> token2token(const Var<Scalar>& x, const Token2TokenParams<Scalar>& p,
                        Activation act = Activation::relu, const Validity& valid = {});

/// [n, d_e] -> [n, d_e]. Queries with no admissible token get a zero output.
template <typename Scalar>
Var<Scalar> masked_self_attention(const Var<Scalar>& x, const Mask& mask,
                                  const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg,
                                  const Validity& valid = {});

/// Same, with the [n_j, n_i] bias already in the graph (lets callers share one mask node).
template <typename Scalar>
Var<Scalar> masked_self_attention(const Var<Scalar>& x, const Var<Scalar>& mask_bias,
                                  const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg);

}  // namespace blosa
