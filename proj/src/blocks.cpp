#include "conformer/blocks.hpp"

#include <cmath>

namespace conformer {

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
}  // namespace

Tensor conv_bn(const Tensor& x, const ConvBnParams& p, int stride, int padding, bool training,
               bool act, Tape* tape) {
  Tensor y = conv2d(x, p.conv_w, nullptr, stride, padding, tape);
  // running stats are deliberately mutated in place in training mode
  Tensor rm = p.bn_rmean, rv = p.bn_rvar;
  y = batch_norm(y, p.bn_gamma, p.bn_beta, rm, rv, training, kBnEps, kBnMomentum, tape);
  return act ? relu(y, tape) : y;
}

Tensor stem_forward(const Tensor& x, const StemParams& p, bool training, Tape* tape) {
  int k = static_cast<int>(p.conv.conv_w.dim(2));
  Tensor y = conv_bn(x, p.conv, p.stride, k / 2, training, /*act=*/true, tape);
  if (p.pool) y = max_pool2d(y, 3, 2, 1, tape);
  return y;
}

Tensor bottleneck_forward(const Tensor& x, const BottleneckParams& p, const Tensor* injected,
                          Tensor* tap, bool training, Tape* tape) {
  Tensor h = conv_bn(x, p.conv1, 1, 0, training, /*act=*/true, tape);
  h = conv_bn(h, p.conv2, p.stride, 1, training, /*act=*/false, tape);
  if (injected) {
    if (injected->shape() != h.shape())
      throw ShapeError("bottleneck injection shape " + injected->shape_str() +
                       " does not match features " + h.shape_str());
    h = add(h, *injected, tape);
  }
  h = relu(h, tape);
  if (tap) *tap = h;
  h = conv_bn(h, p.conv3, 1, 0, training, /*act=*/false, tape);
  Tensor sc = x;
  if (p.shortcut) sc = conv_bn(x, *p.shortcut, p.stride, 0, training, /*act=*/false, tape);
  if (sc.shape() != h.shape())
    throw ShapeError("bottleneck shortcut shape " + sc.shape_str() + " does not match main path " +
                     h.shape_str());
  return relu(add(h, sc, tape), tape);
}

Tensor patch_embed_forward(const Tensor& x, const PatchEmbedParams& p, Tape* tape) {
  int s = static_cast<int>(p.conv_w.dim(2));
  if (x.dim(2) % s != 0 || x.dim(3) % s != 0)
    throw ShapeError("patch embed: input " + x.shape_str() + " not divisible by stride " +
                     std::to_string(s));
  Tensor y = conv2d(x, p.conv_w, &p.conv_b, s, 0, tape);  // [N, E, Kh, Kw]
  int64_t n = y.dim(0), e = y.dim(1), kh = y.dim(2), kw = y.dim(3);
  y = reshape(y, {n, e, kh * kw}, tape);
  return permute(y, {0, 2, 1}, tape);  // [N, K, E], row-major over the grid
}

Tensor mhsa_forward(const Tensor& tokens, const MhsaParams& p, int num_heads, Tape* tape,
                    Tensor* attn_out) {
  if (tokens.rank() != 3)
    throw ShapeError("mhsa expects [N, T, E], got " + tokens.shape_str());
  int64_t n = tokens.dim(0), t = tokens.dim(1), e = tokens.dim(2);
  if (num_heads < 1 || e % num_heads != 0)
    throw ShapeError("embed dim " + std::to_string(e) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  int64_t d = e / num_heads;
  auto split_heads = [&](const Tensor& x) {
    return permute(reshape(x, {n, t, num_heads, d}, tape), {0, 2, 1, 3}, tape);  // [N,h,T,d]
  };
  Tensor q = split_heads(linear(tokens, p.wq, &p.bq, tape));
  Tensor k = split_heads(linear(tokens, p.wk, &p.bk, tape));
  Tensor v = split_heads(linear(tokens, p.wv, &p.bv, tape));
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(d)), tape);
  Tensor attn = softmax(matmul(q, k, /*trans_b=*/true, tape), -1, tape);  // [N,h,T,T]
  if (attn_out) *attn_out = attn;
  Tensor ctx = matmul(attn, v, false, tape);                              // [N,h,T,d]
  ctx = reshape(permute(ctx, {0, 2, 1, 3}, tape), {n, t, e}, tape);
  return linear(ctx, p.wo, &p.bo, tape);
}

Tensor transformer_block_forward(const Tensor& tokens, const TransformerBlockParams& p,
                                 int num_heads, double ln_eps, Tape* tape, Tensor* attn_out) {
  Tensor h = layer_norm(tokens, p.ln1_gamma, p.ln1_beta, ln_eps, tape);
  h = mhsa_forward(h, p.attn, num_heads, tape, attn_out);
  Tensor x = add(tokens, h, tape);
  Tensor m = layer_norm(x, p.ln2_gamma, p.ln2_beta, ln_eps, tape);
  m = linear(m, p.fc1_w, &p.fc1_b, tape);
  m = gelu(m, tape);
  m = linear(m, p.fc2_w, &p.fc2_b, tape);
  return add(x, m, tape);
}

Tensor cnn_head_forward(const Tensor& features, const Tensor& fc_w, const Tensor& fc_b,
                        Tape* tape) {
  if (features.rank() != 4)
    throw ShapeError("cnn head expects NCHW features, got " + features.shape_str());
  Tensor pooled = mean(features, {2, 3}, /*keepdim=*/false, tape);  // [N, C]
  return linear(pooled, fc_w, &fc_b, tape);
}

Tensor trans_head_forward(const Tensor& tokens, const Tensor& ln_gamma, const Tensor& ln_beta,
                          const Tensor& fc_w, const Tensor& fc_b, double ln_eps, Tape* tape) {
  if (tokens.rank() != 3)
    throw ShapeError("trans head expects [N, T, E], got " + tokens.shape_str());
  Tensor h = layer_norm(tokens, ln_gamma, ln_beta, ln_eps, tape);
  Tensor cls = reshape(slice(h, 1, 0, 1, tape), {tokens.dim(0), tokens.dim(2)}, tape);
  return linear(cls, fc_w, &fc_b, tape);
}

}  // namespace conformer
