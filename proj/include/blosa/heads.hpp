#pragma once

#include <span>
#include <string>
#include <vector>

#include "blosa/encoder.hpp"
#include "blosa/gradcheck.hpp"

namespace blosa {

/// [s1; s2; s1 - s2; s1 (.) s2]
template <typename Scalar>
Var<Scalar> relation_rep(const Var<Scalar>& s1, const Var<Scalar>& s2);

/// [s1 (.) s2; |s1 - s2|]
template <typename Scalar>
Var<Scalar> relatedness_rep(const Var<Scalar>& s1, const Var<Scalar>& s2);

/// Hidden relu layer followed by a linear layer to the class logits.
template <typename Scalar>
struct MlpParams {
  Var<Scalar> W1, b1, W2, b2;
  static MlpParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
void init_mlp(ParamStore<Scalar>& store, const std::string& prefix, Index d_in, Index d_hidden,
              Index d_out, Rng& rng);

template <typename Scalar>
struct HeadOutput {
  Var<Scalar> logits;
  Var<Scalar> probs;
};

template <typename Scalar>
HeadOutput<Scalar> mlp_head(const Var<Scalar>& features, const MlpParams<Scalar>& p);

/// 3-way relation classifier over two encodings of equal length.
template <typename Scalar>
HeadOutput<Scalar> nli_head(const Var<Scalar>& s_p, const Var<Scalar>& s_h,
                            const MlpParams<Scalar>& p);

template <typename Scalar>
struct RelatednessOutput {
  Var<Scalar> logits;
  Var<Scalar> probs;  // [K]
  Var<Scalar> score;  // sum_k k * probs_k, in [1, K]
};

template <typename Scalar>
RelatednessOutput<Scalar> relatedness_head(const Var<Scalar>& s1, const Var<Scalar>& s2, Index K,
                                           const MlpParams<Scalar>& p);

/// Distribution over 1..K with expectation y and at most two adjacent non-zeros.
std::vector<double> map_target(double y, Index K);

/// KL(p || q) with 0 ln 0 = 0. Throws when q has a zero where p does not.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Mean over the batch of KL(p_k || softmax(logits_k)).
template <typename Scalar>
Var<Scalar> kl_loss(std::span<const std::vector<double>> targets,
                    std::span<const Var<Scalar>> logits);

/// -log softmax(logits)[label]
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, Index label);

/// sum ||W||^2 over every bound weight-role parameter.
template <typename Scalar>
Var<Scalar> l2_penalty(ParamBinder<Scalar>& p);

/// loss + gamma * l2_penalty; returns `loss` itself when gamma is 0.
template <typename Scalar>
Var<Scalar> objective(const Var<Scalar>& loss, ParamBinder<Scalar>& p, double gamma);

// Sentence selection: rows c_k = [u_k; q; u_k - q; u_k (.) q] pass through a
// Bi-BloSA layer over sentences, then a linear score per sentence.
template <typename Scalar>
void init_sentence_select(ParamStore<Scalar>& store, const EncoderConfig& cfg, Index d_enc,
                          Rng& rng, const std::string& scope = "select/");

template <typename Scalar>
HeadOutput<Scalar> sentence_select_head(std::span<const Var<Scalar>> sentences,
                                        const Var<Scalar>& question, ParamBinder<Scalar>& p,
                                        const EncoderConfig& cfg,
                                        const std::string& scope = "select/");

struct NliCheckOptions {
  std::uint64_t seed = 7;
  Index n_premise = 12;
  Index n_hypothesis = 12;
  Index d_e = 8;
  Index d_h = 8;
  Index block_len = 2;
  Index vocab = 10;
  double step = 1e-5;
};

/// Finite-difference check of every parameter of a Bi-BloSAN encoder shared by
/// both sentences plus an NLI head, float64, dropout off, cross-entropy loss.
GradCheckReport nli_model_gradcheck(const NliCheckOptions& opt = {});

}  // namespace blosa
