#include "blosa/encoder.hpp"
#include "blosa/serialize.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace blosa {

template <typename Scalar>
GateParams<Scalar> GateParams<Scalar>::bind(ParamBinder<Scalar>& p, const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/W2"), p(prefix + "/b")};
}

template <typename Scalar>
FusionParams<Scalar> FusionParams<Scalar>::bind(ParamBinder<Scalar>& p, const std::string& prefix) {
  return {p(prefix + "/W1"), p(prefix + "/b1"), p(prefix + "/W2"), p(prefix + "/b2")};
}

template <typename Scalar>
MBlosaParams<Scalar> MBlosaParams<Scalar>::bind(ParamBinder<Scalar>& p, const std::string& prefix) {
  return {MaskedAttnParams<Scalar>::bind(p, prefix + "/intra"),
          Source2TokenParams<Scalar>::bind(p, prefix + "/summary"),
          MaskedAttnParams<Scalar>::bind(p, prefix + "/inter"),
          GateParams<Scalar>::bind(p, prefix + "/gate"),
          FusionParams<Scalar>::bind(p, prefix + "/fuse")};
}

namespace {

template <typename Scalar>
void init_fusion(ParamStore<Scalar>& store, const std::string& prefix, Index in, Index d, Rng& rng) {
  store.add(prefix + "/W1", glorot_init<Scalar>(in, d, rng), ParamRole::weight);
  store.add(prefix + "/b1", Tensor<Scalar>({d}), ParamRole::bias);
  store.add(prefix + "/W2", glorot_init<Scalar>(in, d, rng), ParamRole::weight);
  store.add(prefix + "/b2", Tensor<Scalar>({d}), ParamRole::bias);
}

template <typename Scalar>
Var<Scalar> fuse(const Var<Scalar>& x, const Var<Scalar>& features, const FusionParams<Scalar>& p,
                 Activation act) {
  const Var<Scalar> candidate = activate(linear(features, p.W1, p.b1), act);
  const Var<Scalar> gate = sigmoid(linear(features, p.W2, p.b2));
  return lerp(x, candidate, gate);
}

}  // namespace

template <typename Scalar>
void init_mblosa(ParamStore<Scalar>& store, const std::string& prefix, Index d, Rng& rng) {
  init_masked_attention(store, prefix + "/intra", d, rng);
  init_source2token(store, prefix + "/summary", d, d, rng);
  init_masked_attention(store, prefix + "/inter", d, rng);
  store.add(prefix + "/gate/W1", glorot_init<Scalar>(d, d, rng), ParamRole::weight);
  store.add(prefix + "/gate/W2", glorot_init<Scalar>(d, d, rng), ParamRole::weight);
  store.add(prefix + "/gate/b", Tensor<Scalar>({d}), ParamRole::bias);
  init_fusion(store, prefix + "/fuse", 3 * d, d, rng);
}

template <typename Scalar>
std::vector<Var<Scalar>> intra_block(const Partition<Scalar>& part, MaskKind kind,
                                     const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg) {
  const Index r = part.plan.r;
  const Mask mask(r, kind);
  std::vector<Var<Scalar>> h;
  h.reserve(part.blocks.size());
  Var<Scalar> shared_bias;
  for (std::size_t l = 0; l < part.blocks.size(); ++l) {
    const Validity& valid = part.valid[l];
    const bool padded = std::find(valid.begin(), valid.end(), false) != valid.end();
    if (padded) {
      h.push_back(masked_self_attention(part.blocks[l], mask, p, cfg, valid));
      continue;
    }
    if (kind == MaskKind::none) {
      h.push_back(masked_self_attention(part.blocks[l], mask, p, cfg));
      continue;
    }
    if (!shared_bias.valid()) {
      shared_bias = constant(part.blocks[l].graph(), mask.bias<Scalar>(), "mask");
    }
    h.push_back(masked_self_attention(part.blocks[l], shared_bias, p, cfg));
  }
  return h;
}

template <typename Scalar>
Var<Scalar> inter_block(std::span<const Var<Scalar>> h_blocks, std::span<const Validity> valid,
                        MaskKind kind, const MBlosaParams<Scalar>& p, const AttnConfig& cfg) {
  if (h_blocks.empty() || h_blocks.size() != valid.size()) {
    throw ShapeError("inter_block", "needs one validity vector per block");
  }
  const auto m = static_cast<Index>(h_blocks.size());
  std::vector<Var<Scalar>> summaries;
  summaries.reserve(h_blocks.size());
  for (std::size_t l = 0; l < h_blocks.size(); ++l) {
    summaries.push_back(source2token(h_blocks[l], p.summary, cfg.activation, valid[l]));
  }
  const Index d = summaries[0].dim(0);
  const Var<Scalar> v = reshape(m == 1 ? summaries[0] : concat<Scalar>(summaries, 0), {m, d});
  const Var<Scalar> o = masked_self_attention(v, Mask(m, kind), p.inter, cfg);
  const Var<Scalar> gate = sigmoid(linear(o, p.gate.W1, p.gate.b) + matmul(v, p.gate.W2));
  return lerp(v, o, gate);
}

template <typename Scalar>
Var<Scalar> context_fusion(const Var<Scalar>& x, const Var<Scalar>& h, const Var<Scalar>& e,
                           const BlockPlan& plan, const FusionParams<Scalar>& p, Activation act) {
  if (x.shape() != h.shape() || x.value().rank() != 2 || x.dim(0) != plan.n) {
    throw ShapeError("context_fusion", "x " + shape_string(x.shape()) + " and h " +
                                           shape_string(h.shape()) + " must both be [n, d] with n = " +
                                           std::to_string(plan.n));
  }
  if (e.shape() != Shape{plan.m, x.dim(1)}) {
    throw ShapeError("context_fusion", "e must be [m, d], got " + shape_string(e.shape()));
  }
  std::vector<Index> block_ids(static_cast<std::size_t>(plan.n));
  for (Index t = 0; t < plan.n; ++t) block_ids[static_cast<std::size_t>(t)] = plan.block_of(t);
  const Var<Scalar> expanded = embedding_lookup(e, std::move(block_ids));
  return fuse(x, concat({x, h, expanded}, 1), p, act);
}

template <typename Scalar>
Var<Scalar> mblosa(const Var<Scalar>& x, MaskKind kind, Index r, const MBlosaParams<Scalar>& p,
                   const AttnConfig& cfg) {
  const Partition<Scalar> part = partition(x, r);
  const std::vector<Var<Scalar>> h_blocks = intra_block(part, kind, p.intra, cfg);
  const Var<Scalar> e = inter_block<Scalar>(h_blocks, part.valid, kind, p, cfg);
  const Var<Scalar> h = departition<Scalar>(h_blocks, part.plan);
  return context_fusion(x, h, e, part.plan, p.fusion, cfg.activation);
}

// ----------------------------------------------------------------- encoder

std::string_view arch_name(EncoderArch arch) {
  switch (arch) {
    case EncoderArch::bi_blosan: return "bi_blosan";
    case EncoderArch::unmasked: return "unmasked";
    case EncoderArch::s2t_only: return "s2t_only";
    case EncoderArch::full_san: return "full_san";
  }
  return "bi_blosan";
}

EncoderArch parse_arch(std::string_view name) {
  if (name == "bi_blosan" || name == "biblosa" || name == "biblosan") return EncoderArch::bi_blosan;
  if (name == "unmasked") return EncoderArch::unmasked;
  if (name == "s2t_only") return EncoderArch::s2t_only;
  if (name == "full_san") return EncoderArch::full_san;
  throw std::invalid_argument("unknown encoder architecture '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (vocab < 1 || d_e < 1 || d_h < 1) throw std::invalid_argument("encoder dims must be >= 1");
  if (block_len < 0) throw std::invalid_argument("block length must be >= 1 or 0 for auto");
  if (!(keep_prob > 0.0) || keep_prob > 1.0) throw std::invalid_argument("keep_prob must lie in (0, 1]");
  if (!(c > 0.0)) throw std::invalid_argument("masking scale c must be positive");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
}

Index EncoderConfig::resolve_block_length(Index n) const {
  if (block_len > 0) return block_len;
  if (len_mu > 0.0) return select_block_length_batched(len_mu, len_sigma, batch);
  return select_block_length(n);
}

AttnConfig EncoderConfig::attn() const {
  AttnConfig a;
  a.d_e = d_h;
  a.d_h = d_h;
  a.c = c;
  a.activation = activation;
  return a;
}

Index EncoderConfig::output_dim() const {
  return arch == EncoderArch::s2t_only ? d_e : 2 * d_h;
}

std::map<std::string, std::string> EncoderConfig::to_map() const {
  return {
      {"vocab", std::to_string(vocab)},
      {"d_e", std::to_string(d_e)},
      {"d_h", std::to_string(d_h)},
      {"r", block_len == 0 ? "auto" : std::to_string(block_len)},
      {"len_mu", format_double(len_mu)},
      {"len_sigma", format_double(len_sigma)},
      {"batch", std::to_string(batch)},
      {"keep_prob", format_double(keep_prob)},
      {"c", format_double(c)},
      {"activation", std::string(activation_name(activation))},
      {"arch", std::string(arch_name(arch))},
  };
}

EncoderConfig EncoderConfig::from_map(const std::map<std::string, std::string>& kv) {
  EncoderConfig cfg;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("vocab")) cfg.vocab = std::stoll(*v);
  if (auto v = get("d_e")) cfg.d_e = std::stoll(*v);
  if (auto v = get("d_h")) cfg.d_h = std::stoll(*v);
  if (auto v = get("r")) cfg.block_len = *v == "auto" ? 0 : std::stoll(*v);
  if (auto v = get("len_mu")) cfg.len_mu = std::stod(*v);
  if (auto v = get("len_sigma")) cfg.len_sigma = std::stod(*v);
  if (auto v = get("batch")) cfg.batch = std::stoll(*v);
  if (auto v = get("keep_prob")) cfg.keep_prob = std::stod(*v);
  if (auto v = get("c")) cfg.c = std::stod(*v);
  if (auto v = get("activation")) cfg.activation = parse_activation(*v);
  if (auto v = get("arch")) cfg.arch = parse_arch(*v);
  cfg.validate();
  return cfg;
}

template <typename Scalar>
void init_encoder(ParamStore<Scalar>& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  store.add("emb/W", uniform_init<Scalar>({cfg.vocab, cfg.d_e}, -0.05, 0.05, rng),
            ParamRole::embedding);
  if (cfg.arch == EncoderArch::s2t_only) {
    init_source2token(store, "s2t", cfg.d_e, cfg.d_e, rng);
    return;
  }
  init_bi_blosa(store, cfg, cfg.d_e, rng);
  init_source2token(store, "s2t", 2 * cfg.d_h, 2 * cfg.d_h, rng);
}

template <typename Scalar>
void init_bi_blosa(ParamStore<Scalar>& store, const EncoderConfig& cfg, Index d_in, Rng& rng,
                   const std::string& scope) {
  if (cfg.arch == EncoderArch::s2t_only) {
    throw std::invalid_argument("init_bi_blosa: the s2t_only architecture has no context fusion layer");
  }
  for (const char* dir : {"fw", "bw"}) {
    const std::string prefix = scope + dir;
    store.add(prefix + "/fc/W", glorot_init<Scalar>(d_in, cfg.d_h, rng), ParamRole::weight);
    store.add(prefix + "/fc/b", Tensor<Scalar>({cfg.d_h}), ParamRole::bias);
    if (cfg.arch == EncoderArch::full_san) {
      init_masked_attention(store, prefix + "/attn", cfg.d_h, rng);
      init_fusion(store, prefix + "/fuse", 2 * cfg.d_h, cfg.d_h, rng);
    } else {
      init_mblosa(store, prefix, cfg.d_h, rng);
    }
  }
}

template <typename Scalar>
Var<Scalar> bi_blosa(const Var<Scalar>& x, ParamBinder<Scalar>& p, const EncoderConfig& cfg,
                     const DropoutContext& drop, const std::string& scope) {
  if (x.value().rank() != 2) throw ShapeError("bi_blosa", "expects [n, d]");
  if (cfg.arch == EncoderArch::s2t_only) {
    throw std::invalid_argument("bi_blosa: the s2t_only architecture has no context fusion layer");
  }
  const AttnConfig attn = cfg.attn();
  const Index n = x.dim(0);
  const Index r = cfg.resolve_block_length(n);
  Var<Scalar> outputs[2];
  const MaskKind kinds[2] = {MaskKind::forward, MaskKind::backward};
  const char* dirs[2] = {"fw", "bw"};
  for (int d = 0; d < 2; ++d) {
    const std::string prefix = scope + dirs[d];
    const MaskKind kind = cfg.arch == EncoderArch::unmasked ? MaskKind::none : kinds[d];
    const Var<Scalar> features =
        relu(linear(dropout(x, drop), p(prefix + "/fc/W"), p(prefix + "/fc/b")));
    if (cfg.arch == EncoderArch::full_san) {
      const Var<Scalar> h = masked_self_attention(
          features, Mask(n, kind), MaskedAttnParams<Scalar>::bind(p, prefix + "/attn"), attn);
      outputs[d] = fuse(features, concat({features, h}, 1),
                        FusionParams<Scalar>::bind(p, prefix + "/fuse"), cfg.activation);
    } else {
      outputs[d] = mblosa(features, kind, r, MBlosaParams<Scalar>::bind(p, prefix), attn);
    }
  }
  return concat({outputs[0], outputs[1]}, 1);
}

template <typename Scalar>
Var<Scalar> encode_embedded(const Var<Scalar>& x, ParamBinder<Scalar>& p,
                            const EncoderConfig& cfg, const DropoutContext& drop) {
  if (cfg.arch == EncoderArch::s2t_only) {
    return source2token(x, Source2TokenParams<Scalar>::bind(p, "s2t"), cfg.activation);
  }
  const Var<Scalar> u = dropout(bi_blosa(x, p, cfg, drop), drop);
  return source2token(u, Source2TokenParams<Scalar>::bind(p, "s2t"), cfg.activation);
}

template <typename Scalar>
Var<Scalar> embed(std::span<const Index> tokens, const Var<Scalar>& table) {
  if (tokens.empty()) throw std::invalid_argument("embed: empty token sequence");
  return embedding_lookup(table, std::vector<Index>(tokens.begin(), tokens.end()));
}

template <typename Scalar>
Var<Scalar> biblosan_encode(std::span<const Index> tokens, ParamBinder<Scalar>& p,
                            const EncoderConfig& cfg, const DropoutContext& drop) {
  return encode_embedded(embed(tokens, p("emb/W")), p, cfg, drop);
}

#define BLOSA_INSTANTIATE_ENCODER(S)                                                             \
  template struct GateParams<S>;                                                                 \
  template struct FusionParams<S>;                                                               \
  template struct MBlosaParams<S>;                                                               \
  template void init_mblosa(ParamStore<S>&, const std::string&, Index, Rng&);                    \
  template std::vector<Var<S>> intra_block(const Partition<S>&, MaskKind,                        \
                                           const MaskedAttnParams<S>&, const AttnConfig&);       \
  template Var<S> inter_block(std::span<const Var<S>>, std::span<const Validity>, MaskKind,      \
                              const MBlosaParams<S>&, const AttnConfig&);                        \
  template Var<S> context_fusion(const Var<S>&, const Var<S>&, const Var<S>&, const BlockPlan&,  \
                                 const FusionParams<S>&, Activation);                            \
  template Var<S> mblosa(const Var<S>&, MaskKind, Index, const MBlosaParams<S>&,                 \
                         const AttnConfig&);                                                     \
  template void init_encoder(ParamStore<S>&, const EncoderConfig&, Rng&);                        \
  template void init_bi_blosa(ParamStore<S>&, const EncoderConfig&, Index, Rng&,                 \
                              const std::string&);                                               \
  template Var<S> bi_blosa(const Var<S>&, ParamBinder<S>&, const EncoderConfig&,                 \
                           const DropoutContext&, const std::string&);                           \
  template Var<S> encode_embedded(const Var<S>&, ParamBinder<S>&, const EncoderConfig&,          \
                                  const DropoutContext&);                                        \
  template Var<S> embed(std::span<const Index>, const Var<S>&);                                  \
  template Var<S> biblosan_encode(std::span<const Index>, ParamBinder<S>&, const EncoderConfig&, \
                                  const DropoutContext&);

BLOSA_INSTANTIATE_ENCODER(float)
BLOSA_INSTANTIATE_ENCODER(double)

}  // namespace blosa
