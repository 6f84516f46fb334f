#pragma once

#include <optional>

#include "conformer/ops.hpp"

namespace conformer {

// Parameter bundles for the network blocks. Tensors are shared handles into a
// ParamStore; the structs add no state of their own beyond a few integers fixed
// at build time. Forward functions take `training` for batch-norm mode and an
// optional tape.

struct ConvBnParams {
  Tensor conv_w;             // [out, in, k, k], no conv bias (bn follows)
  Tensor bn_gamma, bn_beta;
  Tensor bn_rmean, bn_rvar;  // running stats, updated in place when training
};

// conv -> bn -> (optional relu)
Tensor conv_bn(const Tensor& x, const ConvBnParams& p, int stride, int padding, bool training,
               bool act, Tape* tape);

struct StemParams {
  ConvBnParams conv;
  int stride = 2;
  bool pool = true;  // 3x3 stride-2 max pool, padding 1
};

// k x k stride-s conv (padding k/2) + bn + relu, then the optional max pool.
Tensor stem_forward(const Tensor& x, const StemParams& p, bool training, Tape* tape = nullptr);

struct BottleneckParams {
  ConvBnParams conv1;  // 1x1 reduce
  ConvBnParams conv2;  // 3x3, carries the stride
  ConvBnParams conv3;  // 1x1 expand
  std::optional<ConvBnParams> shortcut;  // 1x1 stride-s projection when shapes change
  int stride = 1;
};

// Standard bottleneck with two extra hooks used by the branch coupling:
// `injected` is added right after the second bn (before its relu), and the
// activated output of that stage is reported through `tap` - the same point
// whose features feed the coupling in the other direction.
Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p, const Tensor* injected,
                          Tensor* tap, bool training, Tape* tape = nullptr);

struct PatchEmbedParams {
  Tensor conv_w;  // [E, C_stem, s, s] with kernel = stride = s
  Tensor conv_b;  // [E]
};

// Strided conv over the stem features, flattened row-major to [N, K, E].
Tensor patch_embed_forward(const Tensor& x, const PatchEmbedParams& p, Tape* tape = nullptr);

struct MhsaParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [E, E] projections with bias
  Tensor wo, bo;                  // output projection
};

// Multi-head self-attention over [N, T, E] with num_heads heads, per-head
// scaling 1/sqrt(E/h). If attn_out is non-null it receives the post-softmax
// attention [N, h, T, T].
Tensor mhsa_forward(const Tensor& tokens, const MhsaParams& p, int num_heads,
                    Tape* tape = nullptr, Tensor* attn_out = nullptr);

struct TransformerBlockParams {
  Tensor ln1_gamma, ln1_beta;
  MhsaParams attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b;  // [hidden, E]
  Tensor fc2_w, fc2_b;  // [E, hidden]
};

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)) with a GELU
// between the two fc layers.
Tensor transformer_block_forward(const Tensor& tokens, const TransformerBlockParams& p,
                                 int num_heads, double ln_eps, Tape* tape = nullptr,
                                 Tensor* attn_out = nullptr);

// Global average pool over the spatial dims, then fc.
Tensor cnn_head_forward(const Tensor& features, const Tensor& fc_w, const Tensor& fc_b,
                        Tape* tape = nullptr);

// Layer norm over all tokens, then fc on the class token.
Tensor trans_head_forward(const Tensor& tokens, const Tensor& ln_gamma, const Tensor& ln_beta,
                          const Tensor& fc_w, const Tensor& fc_b, double ln_eps,
                          Tape* tape = nullptr);

}  // namespace conformer
