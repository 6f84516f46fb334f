#pragma once

#include <optional>
#include <vector>

#include "conformer/blocks.hpp"
#include "conformer/config.hpp"
#include "conformer/params.hpp"
#include "conformer/rng.hpp"

namespace conformer {

// Feature coupling unit. One per coupled block; the down path feeds CNN
// features into the token stream, the up path injects processed tokens back
// into the second bottleneck of the same block.
struct FcuParams {
  // down: 1x1 conv Cmid -> E, resample to the patch grid, layer norm, act
  Tensor down_conv_w, down_conv_b;
  Tensor down_ln_gamma, down_ln_beta;
  // conv sampling strategy only: learned resampler (kernel = stride = ratio
  // when the map is larger than the grid, 1x1 after the upsample otherwise)
  Tensor down_sample_w, down_sample_b;
  // attention sampling strategy only: E x E maps shared by both directions
  Tensor attn_wq, attn_wk, attn_wv;
  // up: 1x1 conv E -> Cmid, batch norm, act, expand to the feature map
  Tensor up_conv_w, up_conv_b;
  Tensor up_bn_gamma, up_bn_beta, up_bn_rmean, up_bn_rvar;
};

// One network block: the bottlenecks run in `units` order (units[0] produces
// the tap; when coupled, units[1] receives the injection), plus the paired
// transformer block.
struct BlockParams {
  std::vector<BottleneckParams> units;
  std::optional<FcuParams> fcu;  // present iff the block is coupled
  TransformerBlockParams trans;
};

// Optional observation points for visualization and tests. Vectors are
// indexed by block (0-based) and only filled for the parts a branch ran.
struct ForwardHooks {
  bool want_attention = false;    // post-softmax attention per block [N,h,T,T]
  bool want_maps = false;         // stem/map/token states per block
  bool want_fcu = false;          // coupling internals

  std::vector<Tensor> attention;
  Tensor stem_map;
  std::vector<Tensor> block_maps;     // CNN output after each block
  std::vector<Tensor> block_tokens;   // tokens after each block
  std::vector<Tensor> fcu_deltas;         // per coupled block, [N,K,E]
  std::vector<Tensor> fcu_injections;     // per coupled block, [N,Cmid,H,W]
  std::vector<Tensor> fcu_attn_weights;   // attention sampling cache [N,K,1,n]
  std::vector<Tensor> tokens_before_fcu;  // token state either side of the add
  std::vector<Tensor> tokens_after_fcu;
};

struct ForwardResult {
  Tensor cnn_logits;    // undefined when the branch did not run
  Tensor trans_logits;
};

// The assembled dual-branch model. Parameters live in a ParamStore under
// stable names; construction order (= RNG consumption order) never depends on
// the branch, so degenerations built from the same seed share bit-identical
// weights with the full model for every part they keep.
class Conformer {
 public:
  Conformer(const ConformerConfig& cfg, uint64_t seed, DType dt = DType::f32);

  ForwardResult forward(const Tensor& images, bool training, Tape* tape = nullptr,
                        ForwardHooks* hooks = nullptr);
  // Eval forward; class scores = cnn_logits + trans_logits (or the single
  // branch's logits for a degeneration).
  Tensor predict(const Tensor& images);

  // Overwrites every FCU projection (conv weights/biases, conv-sampler,
  // attention maps) with zeros, silencing the coupling in both directions.
  void zero_fcu_projections();

  const ConformerConfig& config() const { return cfg_; }
  DType dtype() const { return dt_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  struct Registrar;
  void build(uint64_t seed);

  ConformerConfig cfg_;
  DType dt_;
  ParamStore params_;

  StemParams stem_;
  std::vector<BlockParams> blocks_;
  PatchEmbedParams patch_embed_;
  Tensor cls_token_;
  Tensor pos_embed_;  // defined only when enabled
  Tensor final_ln_gamma_, final_ln_beta_;
  Tensor cnn_fc_w_, cnn_fc_b_;
  Tensor trans_fc_w_, trans_fc_b_;
};

// The FCU passes, exposed for direct testing. fcu_down maps a CNN tap
// [N,Cmid,H,W] to a per-token additive update [N,K,E]; patch_tokens ([N,K,E],
// class token already dropped) supplies the queries for the attention
// strategy, and weights_out receives that strategy's softmax cache [N,K,1,n].
// fcu_up maps tokens [N,K+1,E] back to an injection map [N,Cmid,h_out,h_out];
// the attention strategy needs the cached weights from the paired down pass
// and throws ContractError without them.
Tensor fcu_down(const Tensor& tap, const FcuParams& f, const ConformerConfig& cfg, int grid,
                const Tensor& patch_tokens, Tape* tape = nullptr, Tensor* weights_out = nullptr);
Tensor fcu_up(const Tensor& tokens, const FcuParams& f, const ConformerConfig& cfg, int grid,
              int h_out, bool training, Tape* tape = nullptr,
              const Tensor& cached_weights = Tensor());

// Appendix-style attention sampling over one aligned patch set, batch omitted.
// pc: [K, n, E] projected feature-map patches, pt: [K, E] tokens, wq/wk/wv:
// [E, E]. Down returns pt + softmax((pt Wq)(pc Wk)^T / sqrt(E)) (pc Wv) and,
// through weights_out, the softmax cache [K, 1, n] the up pass re-uses.
Tensor attention_sample_down(const Tensor& pc, const Tensor& pt, const Tensor& wq,
                             const Tensor& wk, const Tensor& wv, Tensor* weights_out,
                             Tape* tape = nullptr);
// Up re-applies the cached weights transposed: pc + weights^T pt. Throws
// ContractError when the cache is absent.
Tensor attention_sample_up(const Tensor& pc, const Tensor& pt, const Tensor& weights,
                           Tape* tape = nullptr);

}  // namespace conformer
