#include "blosa/heads.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace blosa {

namespace {

template <typename Scalar>
void require_pair(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.value().rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError(op, "encodings must be vectors of equal length, got " +
                             shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> relation_rep(const Var<Scalar>& s1, const Var<Scalar>& s2) {
  require_pair("relation_rep", s1, s2);
  return concat({s1, s2, sub(s1, s2), mul(s1, s2)}, 0);
}

template <typename Scalar>
Var<Scalar> relatedness_rep(const Var<Scalar>& s1, const Var<Scalar>& s2) {
  require_pair("relatedness_rep", s1, s2);
  return concat({mul(s1, s2), abs(sub(s1, s2))}, 0);
}

template <typename Scalar>
MlpParams<Scalar> MlpParams<Scalar>::bind(ParamBinder<Scalar>& p, const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/b1"), p(prefix + "/W2"), p(prefix + "/b2")};
}

template <typename Scalar>
void init_mlp(ParamStore<Scalar>& store, const std::string& prefix, Index d_in, Index d_hidden,
              Index d_out, Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(d_in, d_hidden, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d_hidden}), ParamRole::bias);
  store.add(prefix + "/W2", glorot_init<Scalar>(d_hidden, d_out, rng), ParamRole::weight);
  store.add(prefix + "/b2", Tensor<Scalar>({d_out}), ParamRole::bias);
}

template <typename Scalar>
HeadOutput<Scalar> mlp_head(const Var<Scalar>& features, const MlpParams<Scalar>& p) {
  const Var<Scalar> logits = linear(relu(linear(features, p.W1, p.b1)), p.W2, p.b2);
  return {logits, softmax(logits)};
}

template <typename Scalar>
HeadOutput<Scalar> nli_head(const Var<Scalar>& s_p, const Var<Scalar>& s_h,
                            const MlpParams<Scalar>& p) {
  HeadOutput<Scalar> out = mlp_head(relation_rep(s_p, s_h), p);
  if (out.logits.dim(0) != 3) throw ShapeError("nli_head", "output layer must have 3 units");
  return out;
}

template <typename Scalar>
RelatednessOutput<Scalar> relatedness_head(const Var<Scalar>& s1, const Var<Scalar>& s2, Index K,
                                           const MlpParams<Scalar>& p) {
  if (K < 2) throw std::invalid_argument("relatedness_head: K must be >= 2");
  const HeadOutput<Scalar> h = mlp_head(relatedness_rep(s1, s2), p);
  if (h.logits.dim(0) != K) {
    throw ShapeError("relatedness_head", "output layer has " + std::to_string(h.logits.dim(0)) +
                                             " units for K = " + std::to_string(K));
  }
  Tensor<Scalar> beta({K});
  for (Index k = 0; k < K; ++k) beta[k] = static_cast<Scalar>(k + 1);
  const Var<Scalar> score = sum(h.probs * constant(s1.graph(), std::move(beta), "beta"));
  return {h.logits, h.probs, score};
}

std::vector<double> map_target(double y, Index K) {
  if (K < 1) throw std::invalid_argument("map_target: K must be >= 1");
  if (!(y >= 1.0) || !(y <= static_cast<double>(K))) {
    throw std::invalid_argument("map_target: y = " + std::to_string(y) + " outside [1, " +
                                std::to_string(K) + "]");
  }
  std::vector<double> p(static_cast<std::size_t>(K), 0.0);
  const double fl = std::floor(y);
  const auto lo = static_cast<std::size_t>(fl);  // 1-based class floor(y)
  p[lo - 1] = fl - y + 1.0;
  if (lo + 1 <= static_cast<std::size_t>(K)) p[lo] = y - fl;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0) {
      throw std::domain_error("kl_divergence: q is zero at class " + std::to_string(k + 1) +
                              " where p is positive");
    }
    kl += p[k] * (std::log(p[k]) - std::log(q[k]));
  }
  return kl;
}

template <typename Scalar>
Var<Scalar> kl_loss(std::span<const std::vector<double>> targets,
                    std::span<const Var<Scalar>> logits) {
  if (targets.empty() || targets.size() != logits.size()) {
    throw std::invalid_argument("kl_loss: needs one target per prediction");
  }
  Graph<Scalar>& g = logits[0].graph();
  Var<Scalar> total;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const std::vector<double>& p = targets[b];
    const Var<Scalar> log_q = log_softmax(logits[b]);
    if (static_cast<Index>(p.size()) != log_q.dim(0)) {
      throw ShapeError("kl_loss", "target has " + std::to_string(p.size()) + " classes, logits " +
                                      std::to_string(log_q.dim(0)));
    }
    Tensor<Scalar> weights({log_q.dim(0)});
    double entropy_term = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] == 0.0) continue;
      if (log_q.value()[static_cast<Index>(k)] == -std::numeric_limits<Scalar>::infinity()) {
        throw std::domain_error("kl_loss: predicted probability is zero where the target is positive");
      }
      weights[static_cast<Index>(k)] = static_cast<Scalar>(p[k]);
      entropy_term += p[k] * std::log(p[k]);
    }
    const Var<Scalar> cross = sum(log_q * constant(g, std::move(weights), "target"));
    const Var<Scalar> kl =
        add(scale(cross, -1.0), constant(g, Tensor<Scalar>::scalar(static_cast<Scalar>(entropy_term))));
    total = b == 0 ? kl : add(total, kl);
  }
  return scale(total, 1.0 / static_cast<double>(targets.size()));
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, Index label) {
  if (logits.value().rank() != 1) throw ShapeError("cross_entropy", "logits must be a vector");
  const Index K = logits.dim(0);
  if (label < 0 || label >= K) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(K) + ")");
  }
  Tensor<Scalar> onehot({K});
  onehot[label] = Scalar(1);
  return scale(sum(log_softmax(logits) * constant(logits.graph(), std::move(onehot), "label")), -1.0);
}

template <typename Scalar>
Var<Scalar> l2_penalty(ParamBinder<Scalar>& p) {
  Var<Scalar> total;
  for (const auto& [path, id] : p.bound()) {
    if (p.store().entry(path).role != ParamRole::weight) continue;
    const Var<Scalar> w(p.graph(), id);
    const Var<Scalar> sq = sum(w * w);
    total = total.valid() ? add(total, sq) : sq;
  }
  if (!total.valid()) return constant(p.graph(), Tensor<Scalar>::scalar(0), "l2");
  return total;
}

template <typename Scalar>
Var<Scalar> objective(const Var<Scalar>& loss, ParamBinder<Scalar>& p, double gamma) {
  if (gamma < 0) throw std::invalid_argument("objective: gamma must be >= 0");
  if (gamma == 0) return loss;
  return add(loss, scale(l2_penalty(p), gamma));
}

template <typename Scalar>
void init_sentence_select(ParamStore<Scalar>& store, const EncoderConfig& cfg, Index d_enc,
                          Rng& rng, const std::string& scope) {
  init_bi_blosa(store, cfg, 4 * d_enc, rng, scope);
  store.add(scope + "score/W", glorot_init<Scalar>(2 * cfg.d_h, 1, rng), ParamRole::weight);
  store.add(scope + "score/b", Tensor<Scalar>({1}), ParamRole::bias);
}

template <typename Scalar>
HeadOutput<Scalar> sentence_select_head(std::span<const Var<Scalar>> sentences,
                                        const Var<Scalar>& question, ParamBinder<Scalar>& p,
                                        const EncoderConfig& cfg, const std::string& scope) {
  if (sentences.empty()) throw std::invalid_argument("sentence_select_head: needs m >= 1 sentences");
  std::vector<Var<Scalar>> rows;
  rows.reserve(sentences.size());
  for (const Var<Scalar>& u : sentences) {
    require_pair("sentence_select_head", u, question);
    rows.push_back(concat({u, question, sub(u, question), mul(u, question)}, 0));
  }
  const auto m = static_cast<Index>(rows.size());
  const Index width = rows[0].dim(0);
  const Var<Scalar> c = reshape(m == 1 ? rows[0] : concat<Scalar>(rows, 0), {m, width});
  EncoderConfig layer = cfg;
  layer.len_mu = 0.0;
  const Var<Scalar> fused = bi_blosa(c, p, layer, {}, scope);
  const Var<Scalar> scores =
      reshape(linear(fused, p(scope + "score/W"), p(scope + "score/b")), {m});
  return {scores, softmax(scores)};
}

GradCheckReport nli_model_gradcheck(const NliCheckOptions& opt) {
  EncoderConfig cfg;
  cfg.vocab = opt.vocab;
  cfg.d_e = opt.d_e;
  cfg.d_h = opt.d_h;
  cfg.block_len = opt.block_len;
  ParamStore<double> store;
  Rng rng = substream(opt.seed, "init");
  init_encoder(store, cfg, rng);
  init_mlp(store, "head", 4 * cfg.output_dim(), cfg.d_h, 3, rng);
  // Unit-scale random inputs and biases: keeps every path (including the
  // query side of the tanh-bounded scores) well above finite-difference noise.
  for (auto& e : store.entries()) {
    if (e.role == ParamRole::bias) e.value = uniform_init<double>(e.value.shape(), -1.0, 1.0, rng);
    if (e.role == ParamRole::embedding) e.value = uniform_init<double>(e.value.shape(), -1.0, 1.0, rng);
  }
  Rng data = substream(opt.seed, "data");
  std::uniform_int_distribution<Index> tok(0, opt.vocab - 1);
  std::vector<Index> premise(static_cast<std::size_t>(opt.n_premise));
  std::vector<Index> hypothesis(static_cast<std::size_t>(opt.n_hypothesis));
  for (Index& t : premise) t = tok(data);
  for (Index& t : hypothesis) t = tok(data);

  const ModelLoss<double> loss = [&](ParamBinder<double>& p) {
    const Var<double> s_p = biblosan_encode<double>(premise, p, cfg);
    const Var<double> s_h = biblosan_encode<double>(hypothesis, p, cfg);
    return cross_entropy(nli_head(s_p, s_h, MlpParams<double>::bind(p, "head")).logits, 1);
  };
  return finite_difference_check(loss, store, opt.step);
}

#define BLOSA_INSTANTIATE_HEADS(S)                                                               \
  template Var<S> relation_rep(const Var<S>&, const Var<S>&);                                    \
  template Var<S> relatedness_rep(const Var<S>&, const Var<S>&);                                 \
  template struct MlpParams<S>;                                                                  \
  template void init_mlp(ParamStore<S>&, const std::string&, Index, Index, Index, Rng&);         \
  template HeadOutput<S> mlp_head(const Var<S>&, const MlpParams<S>&);                           \
  template HeadOutput<S> nli_head(const Var<S>&, const Var<S>&, const MlpParams<S>&);            \
  template RelatednessOutput<S> relatedness_head(const Var<S>&, const Var<S>&, Index,            \
                                                 const MlpParams<S>&);                           \
  template Var<S> kl_loss(std::span<const std::vector<double>>, std::span<const Var<S>>);        \
  template Var<S> cross_entropy(const Var<S>&, Index);                                           \
  template Var<S> l2_penalty(ParamBinder<S>&);                                                   \
  template Var<S> objective(const Var<S>&, ParamBinder<S>&, double);                             \
  template void init_sentence_select(ParamStore<S>&, const EncoderConfig&, Index, Rng&,          \
                                     const std::string&);                                        \
  template HeadOutput<S> sentence_select_head(std::span<const Var<S>>, const Var<S>&,            \
                                              ParamBinder<S>&, const EncoderConfig&,             \
                                              const std::string&);

BLOSA_INSTANTIATE_HEADS(float)
BLOSA_INSTANTIATE_HEADS(double)

}  // namespace blosa
