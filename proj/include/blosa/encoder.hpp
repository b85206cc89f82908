#pragma once

#include <map>
#include <span>
#include <string>

#include "blosa/blocks.hpp"

namespace blosa {

// ------------------------------------------------------------------ mBloSA

/// Block-level gate merging the inter-block attention output o with its input v.
template <typename Scalar>
struct GateParams {
  Var<Scalar> W1, W2, b;
  static GateParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

/// Feature fusion gate over [x; h; E] (or [x; h] for the full-sequence variant).
template <typename Scalar>
struct FusionParams {
  Var<Scalar> W1, b1, W2, b2;
  static FusionParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
struct MBlosaParams {
  MaskedAttnParams<Scalar> intra;
  Source2TokenParams<Scalar> summary;
  MaskedAttnParams<Scalar> inter;
  GateParams<Scalar> gate;
  FusionParams<Scalar> fusion;

  /// Paths: <prefix>/{intra,summary,inter,gate,fuse}/...
  static MBlosaParams bind(ParamBinder<Scalar>& p, const std::string& prefix);
};

template <typename Scalar>
void init_mblosa(ParamStore<Scalar>& store, const std::string& prefix, Index d, Rng& rng);

/// h^l = g^m(x^l, M) for every block with one shared parameter set.
template <typename Scalar>
std::vector<Var<Scalar>> intra_block(const Partition<Scalar>& part, MaskKind kind,
                                     const MaskedAttnParams<Scalar>& p, const AttnConfig& cfg);

/// Block summaries v, block-level masked attention o, and the gated merge e: [m, d].
template <typename Scalar>
Var<Scalar> inter_block(std::span<const Var<Scalar>> h_blocks, std::span<const Validity> valid,
                        MaskKind kind, const MBlosaParams<Scalar>& p, const AttnConfig& cfg);

/// u = G (.) F + (1 - G) (.) x with E the block-wise duplication of e.
template <typename Scalar>
Var<Scalar> context_fusion(const Var<Scalar>& x, const Var<Scalar>& h, const Var<Scalar>& e,
                           const BlockPlan& plan, const FusionParams<Scalar>& p,
                           Activation act = Activation::relu);

/// x [n, d] -> u [n, d].
template <typename Scalar>
Var<Scalar> mblosa(const Var<Scalar>& x, MaskKind kind, Index r, const MBlosaParams<Scalar>& p,
                   const AttnConfig& cfg);

// ----------------------------------------------------------------- encoder

enum class EncoderArch {
  bi_blosan,   // forward + backward mBloSA
  unmasked,    // same structure with kind=none masks
  s2t_only,    // embeddings straight into source2token
  full_san,    // forward + backward masked self-attention over the whole sequence
};

std::string_view arch_name(EncoderArch arch);
EncoderArch parse_arch(std::string_view name);

struct EncoderConfig {
  Index vocab = 16;
  Index d_e = 16;
  Index d_h = 16;
  Index block_len = 0;     // 0 selects automatically
  double len_mu = 0.0;     // > 0 with len_sigma/batch: one r for the whole length distribution
  double len_sigma = 0.0;
  Index batch = 64;
  double keep_prob = 1.0;
  double c = 5.0;
  Activation activation = Activation::relu;
  EncoderArch arch = EncoderArch::bi_blosan;

  void validate() const;
  /// Block length used for a sequence of length n.
  Index resolve_block_length(Index n) const;
  AttnConfig attn() const;
  Index output_dim() const;

  std::map<std::string, std::string> to_map() const;
  static EncoderConfig from_map(const std::map<std::string, std::string>& kv);
};

/// Glorot weights, zero biases, embeddings uniform on (-0.05, 0.05).
template <typename Scalar>
void init_encoder(ParamStore<Scalar>& store, const EncoderConfig& cfg, Rng& rng);

/// Parameters of one Bi-BloSA layer over d_in input features, under <scope>fw/ and <scope>bw/.
template <typename Scalar>
void init_bi_blosa(ParamStore<Scalar>& store, const EncoderConfig& cfg, Index d_in, Rng& rng,
                   const std::string& scope = {});

/// Bi-BloSA context fusion: x [n, d_in] -> u_bi [n, 2 d_h]. Reads <scope>fw/* and <scope>bw/*.
template <typename Scalar>
Var<Scalar> bi_blosa(const Var<Scalar>& x, ParamBinder<Scalar>& p, const EncoderConfig& cfg,
                     const DropoutContext& drop = {}, const std::string& scope = {});

/// Encodes an embedded sequence x [n, d_e] into s [output_dim].
template <typename Scalar>
Var<Scalar> encode_embedded(const Var<Scalar>& x, ParamBinder<Scalar>& p,
                            const EncoderConfig& cfg, const DropoutContext& drop = {});

/// Token ids -> s. Reads emb/W plus the architecture's parameters.
template <typename Scalar>
Var<Scalar> biblosan_encode(std::span<const Index> tokens, ParamBinder<Scalar>& p,
                            const EncoderConfig& cfg, const DropoutContext& drop = {});

/// x = W^(e) w, table [N, d_e] -> [n, d_e].
template <typename Scalar>
Var<Scalar> embed(std::span<const Index> tokens, const Var<Scalar>& table);

}  // namespace blosa
