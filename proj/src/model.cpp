#include "conformer/model.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>

#include "conformer/ops.hpp"

namespace conformer {

namespace {

template <class T, class F>
void fill_with(Tensor& t, F&& gen) {
  T* p = t.data<T>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(gen());
}

// He normal over fan-out = Cout * kh * kw; used for every conv in the model.
Tensor he_conv_init(Rng& rng, std::vector<int64_t> shape, DType dt) {
  double fan_out = static_cast<double>(shape[0] * shape[2] * shape[3]);
  double sd = std::sqrt(2.0 / fan_out);
  Tensor t = Tensor::empty(std::move(shape), dt);
  dispatch_dtype(dt, [&]<class T>() { fill_with<T>(t, [&] { return rng.normal(0.0, sd); }); });
  return t;
}

// Truncated normal (|z| <= 2) std 0.02; transformer-side weights and tokens.
Tensor trunc_init(Rng& rng, std::vector<int64_t> shape, DType dt) {
  Tensor t = Tensor::empty(std::move(shape), dt);
  dispatch_dtype(dt,
                 [&]<class T>() { fill_with<T>(t, [&] { return rng.truncated_normal(0.0, 0.02); }); });
  return t;
}

void fill_zero(Tensor& t) {
  dispatch_dtype(t.dtype(), [&]<class T>() { fill_with<T>(t, [] { return 0.0; }); });
}

std::string block_tag(const char* prefix, int block) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s.b%02d", prefix, block);
  return buf;
}

// ---- token / grid reshapes (row-major grids throughout) ----

Tensor grid_from_tokens(const Tensor& patch_tokens, int g, Tape* tape) {
  const auto& s = patch_tokens.shape();  // [N,K,E]
  Tensor r = reshape(patch_tokens, {s[0], g, g, s[2]}, tape);
  return permute(r, {0, 3, 1, 2}, tape);
}

Tensor tokens_from_grid(const Tensor& map, Tape* tape) {
  const auto& s = map.shape();  // [N,C,g,g]
  Tensor p = permute(map, {0, 2, 3, 1}, tape);
  return reshape(p, {s[0], s[2] * s[3], s[1]}, tape);
}

// [N,C,H,W] -> [N,K,n,C]: K patches of n = (H/g)*(W/g) positions each,
// patches and positions both row-major.
Tensor split_patches(const Tensor& map, int g, Tape* tape) {
  const auto& s = map.shape();
  int64_t ph = s[2] / g, pw = s[3] / g;
  Tensor r = reshape(map, {s[0], s[1], g, ph, g, pw}, tape);
  Tensor p = permute(r, {0, 2, 4, 3, 5, 1}, tape);
  return reshape(p, {s[0], static_cast<int64_t>(g) * g, ph * pw, s[1]}, tape);
}

// exact inverse of split_patches
Tensor merge_patches(const Tensor& patches, int g, int h, int w, Tape* tape) {
  const auto& s = patches.shape();  // [N,K,n,C]
  int64_t ph = h / g, pw = w / g;
  Tensor r = reshape(patches, {s[0], g, g, ph, pw, s[3]}, tape);
  Tensor p = permute(r, {0, 5, 1, 3, 2, 4}, tape);
  return reshape(p, {s[0], s[3], static_cast<int64_t>(h), static_cast<int64_t>(w)}, tape);
}

}  // namespace

// CNN features -> per-token additive update [N,K,E]. For the attention
// strategy the current patch tokens provide the queries and weights_out
// receives the softmax cache the up pass re-uses.
Tensor fcu_down(const Tensor& tap, const FcuParams& f, const ConformerConfig& cfg, int grid,
                const Tensor& patch_tokens, Tape* tape, Tensor* weights_out) {
  Tensor h = conv2d(tap, f.down_conv_w, &f.down_conv_b, 1, 0, tape);  // [N,E,H,W]
  if (static_cast<int>(h.dim(2)) < grid) h = resample_nearest(h, grid, grid, tape);
  int ratio = static_cast<int>(h.dim(2)) / grid;

  Tensor flat;
  switch (cfg.sampling) {
    case Sampling::avgpool:
      flat = tokens_from_grid(ratio == 1 ? h : avg_pool2d(h, ratio, ratio, 0, tape), tape);
      break;
    case Sampling::maxpool:
      flat = tokens_from_grid(ratio == 1 ? h : max_pool2d(h, ratio, ratio, 0, tape), tape);
      break;
    case Sampling::conv:
      flat = tokens_from_grid(conv2d(h, f.down_sample_w, &f.down_sample_b, ratio, 0, tape), tape);
      break;
    case Sampling::attention: {
      const auto& s = h.shape();
      int64_t n = (s[2] / grid) * (s[3] / grid);
      int64_t k_cnt = static_cast<int64_t>(grid) * grid;
      Tensor pc = split_patches(h, grid, tape);  // [N,K,n,E]
      Tensor q = matmul(patch_tokens, f.attn_wq, false, tape);
      q = scale(q, 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)), tape);
      q = reshape(q, {s[0], k_cnt, 1, static_cast<int64_t>(cfg.embed_dim)}, tape);
      Tensor key = matmul(pc, f.attn_wk, false, tape);
      Tensor val = matmul(pc, f.attn_wv, false, tape);
      Tensor w = softmax(matmul(q, key, true, tape), 3, tape);  // [N,K,1,n]
      if (weights_out) *weights_out = w;
      (void)n;
      flat = reshape(matmul(w, val, false, tape), {s[0], k_cnt, cfg.embed_dim}, tape);
      break;
    }
  }
  Tensor out = layer_norm(flat, f.down_ln_gamma, f.down_ln_beta, 1e-6, tape);
  if (cfg.fcu_activation) out = gelu(out, tape);
  return out;
}

// Tokens (class token dropped) -> injection map [N,Cmid,H,W].
Tensor fcu_up(const Tensor& tokens, const FcuParams& f, const ConformerConfig& cfg, int grid,
              int h_out, bool training, Tape* tape, const Tensor& cached_weights) {
  const auto& ts = tokens.shape();  // [N,T,E]
  int64_t k_cnt = ts[1] - 1;
  Tensor pt = slice(tokens, 1, 1, k_cnt, tape);
  Tensor gridmap = grid_from_tokens(pt, grid, tape);                  // [N,E,g,g]
  Tensor h = conv2d(gridmap, f.up_conv_w, &f.up_conv_b, 1, 0, tape);  // [N,Cmid,g,g]
  Tensor rm = f.up_bn_rmean, rv = f.up_bn_rvar;
  h = batch_norm(h, f.up_bn_gamma, f.up_bn_beta, rm, rv, training, 1e-5, 0.1, tape);
  if (cfg.fcu_activation) h = relu(h, tape);

  if (cfg.sampling == Sampling::attention) {
    if (!cached_weights.defined())
      throw ContractError("attention up-sampling needs the down-pass softmax cache");
    int64_t n = cached_weights.dim(3);
    int ph = 1;
    while (static_cast<int64_t>(ph) * ph < n) ++ph;  // n is a perfect square
    Tensor wt = permute(cached_weights, {0, 1, 3, 2}, tape);  // [N,K,n,1]
    Tensor hv = reshape(tokens_from_grid(h, tape), {ts[0], k_cnt, 1, h.dim(1)}, tape);
    Tensor spread = matmul(wt, hv, false, tape);  // [N,K,n,Cmid]
    Tensor merged = merge_patches(spread, grid, grid * ph, grid * ph, tape);
    if (h_out < grid) merged = avg_pool2d(merged, grid / h_out, grid / h_out, 0, tape);
    return merged;
  }
  if (h_out > grid) return resample_nearest(h, h_out, h_out, tape);
  if (h_out == grid) return h;
  return avg_pool2d(h, grid / h_out, grid / h_out, 0, tape);
}

// Adds a tensor to the store when `keep` is set, otherwise just returns it.
// Either way the initializer consumed its RNG draws, so builds of different
// branches from one seed stay aligned on every shared parameter.
struct Conformer::Registrar {
  ParamStore& ps;
  Rng& rng;
  DType dt;
  bool keep = true;

  Tensor reg(const std::string& name, Tensor t, bool trainable, bool decay) {
    if (keep) return ps.add(name, std::move(t), trainable, decay);
    return t;
  }
  Tensor conv(const std::string& name, std::vector<int64_t> shape) {
    return reg(name, he_conv_init(rng, std::move(shape), dt), true, true);
  }
  Tensor trunc(const std::string& name, std::vector<int64_t> shape, bool decay = true) {
    return reg(name, trunc_init(rng, std::move(shape), dt), true, decay);
  }
  Tensor bias(const std::string& name, std::vector<int64_t> shape) {
    return reg(name, Tensor::zeros(std::move(shape), dt), true, true);
  }
  Tensor gamma(const std::string& name, int64_t c) {
    return reg(name, Tensor::full({c}, 1.0, dt), true, false);
  }
  Tensor beta(const std::string& name, int64_t c) {
    return reg(name, Tensor::zeros({c}, dt), true, false);
  }
  Tensor buf_zeros(const std::string& name, int64_t c) {
    return reg(name, Tensor::zeros({c}, dt), false, false);
  }
  Tensor buf_ones(const std::string& name, int64_t c) {
    return reg(name, Tensor::full({c}, 1.0, dt), false, false);
  }

  ConvBnParams conv_bn(const std::string& prefix, const std::string& conv_label,
                       const std::string& bn_label, int64_t out, int64_t in, int64_t k) {
    ConvBnParams p;
    p.conv_w = conv(prefix + "." + conv_label + ".weight", {out, in, k, k});
    p.bn_gamma = gamma(prefix + "." + bn_label + ".gamma", out);
    p.bn_beta = beta(prefix + "." + bn_label + ".beta", out);
    p.bn_rmean = buf_zeros(prefix + "." + bn_label + ".running_mean", out);
    p.bn_rvar = buf_ones(prefix + "." + bn_label + ".running_var", out);
    return p;
  }

  BottleneckParams bottleneck(const std::string& prefix, int64_t cin, int64_t mid, int64_t cout,
                              int stride) {
    BottleneckParams b;
    b.stride = stride;
    b.conv1 = conv_bn(prefix, "conv1", "bn1", mid, cin, 1);
    b.conv2 = conv_bn(prefix, "conv2", "bn2", mid, mid, 3);
    b.conv3 = conv_bn(prefix, "conv3", "bn3", cout, mid, 1);
    if (cin != cout || stride != 1)
      b.shortcut = conv_bn(prefix, "shortcut", "shortcut_bn", cout, cin, 1);
    return b;
  }

  TransformerBlockParams trans_block(const std::string& prefix, int64_t e) {
    TransformerBlockParams t;
    t.ln1_gamma = gamma(prefix + ".ln1.gamma", e);
    t.ln1_beta = beta(prefix + ".ln1.beta", e);
    t.attn.wq = trunc(prefix + ".attn.q.weight", {e, e});
    t.attn.bq = bias(prefix + ".attn.q.bias", {e});
    t.attn.wk = trunc(prefix + ".attn.k.weight", {e, e});
    t.attn.bk = bias(prefix + ".attn.k.bias", {e});
    t.attn.wv = trunc(prefix + ".attn.v.weight", {e, e});
    t.attn.bv = bias(prefix + ".attn.v.bias", {e});
    t.attn.wo = trunc(prefix + ".attn.proj.weight", {e, e});
    t.attn.bo = bias(prefix + ".attn.proj.bias", {e});
    t.ln2_gamma = gamma(prefix + ".ln2.gamma", e);
    t.ln2_beta = beta(prefix + ".ln2.beta", e);
    t.fc1_w = trunc(prefix + ".mlp.fc1.weight", {4 * e, e});
    t.fc1_b = bias(prefix + ".mlp.fc1.bias", {4 * e});
    t.fc2_w = trunc(prefix + ".mlp.fc2.weight", {e, 4 * e});
    t.fc2_b = bias(prefix + ".mlp.fc2.bias", {e});
    return t;
  }
};

Conformer::Conformer(const ConformerConfig& cfg, uint64_t seed, DType dt) : cfg_(cfg), dt_(dt) {
  cfg_.validate();
  build(seed);
}

void Conformer::build(uint64_t seed) {
  Rng rng(seed);
  Registrar r{params_, rng, dt_};
  const bool keep_cnn = cfg_.branch != Branch::transformer_only;
  const bool keep_trans = cfg_.branch != Branch::cnn_only;
  const bool keep_fcu = cfg_.branch == Branch::full;
  const int64_t e = cfg_.embed_dim;
  const int64_t k_cnt = static_cast<int64_t>(cfg_.patch_grid()) * cfg_.patch_grid();

  r.keep = true;  // stem is shared by every branch
  stem_.conv = r.conv_bn("stem", "conv", "bn", cfg_.stem.out_channels, 3, cfg_.stem.kernel);
  stem_.stride = cfg_.stem.stride;
  stem_.pool = cfg_.stem.pool;

  int64_t c_in = cfg_.stem.out_channels;
  const int n_blocks = cfg_.total_blocks();
  for (int i = 1; i <= n_blocks; ++i) {
    const int s = cfg_.stage_of_block(i);
    const int64_t mid = cfg_.stage_mid_channels[s - 1];
    const int64_t out = cfg_.stage_out_channels[s - 1];
    const int stride = (cfg_.first_block_of_stage(i) && s > 1) ? 2 : 1;
    const bool coupled = cfg_.block_coupled(i);
    const int units = (i == 1) ? 1 : (coupled ? cfg_.n_c : cfg_.n_c - 1);

    BlockParams blk;
    r.keep = keep_cnn;
    for (int u = 1; u <= units; ++u) {
      char tag[64];
      std::snprintf(tag, sizeof(tag), "cnn.s%d.b%02d.u%d", s, i, u);
      blk.units.push_back(
          r.bottleneck(tag, u == 1 ? c_in : out, mid, out, u == 1 ? stride : 1));
    }
    c_in = out;

    if (i == 1) {
      r.keep = keep_trans;
      patch_embed_.conv_w = r.conv("patch_embed.conv.weight",
                                   {e, cfg_.stem.out_channels, cfg_.patch_stride, cfg_.patch_stride});
      patch_embed_.conv_b = r.bias("patch_embed.conv.bias", {e});
      cls_token_ = r.trunc("cls_token", {1, 1, e}, false);
      if (cfg_.positional_embeddings) pos_embed_ = r.trunc("pos_embed", {1, k_cnt + 1, e}, false);
    } else if (coupled) {
      r.keep = keep_fcu;
      const std::string tag = block_tag("fcu", i);
      FcuParams f;
      f.down_conv_w = r.conv(tag + ".down.conv.weight", {e, mid, 1, 1});
      f.down_conv_b = r.bias(tag + ".down.conv.bias", {e});
      if (cfg_.sampling == Sampling::conv) {
        int h = cfg_.stage_resolution(s, cfg_.input_size);
        int ratio = h > cfg_.patch_grid() ? h / cfg_.patch_grid() : 1;
        f.down_sample_w = r.conv(tag + ".down.sample_conv.weight", {e, e, ratio, ratio});
        f.down_sample_b = r.bias(tag + ".down.sample_conv.bias", {e});
      }
      f.down_ln_gamma = r.gamma(tag + ".down.ln.gamma", e);
      f.down_ln_beta = r.beta(tag + ".down.ln.beta", e);
      if (cfg_.sampling == Sampling::attention) {
        f.attn_wq = r.trunc(tag + ".attn.q.weight", {e, e});
        f.attn_wk = r.trunc(tag + ".attn.k.weight", {e, e});
        f.attn_wv = r.trunc(tag + ".attn.v.weight", {e, e});
      }
      f.up_conv_w = r.conv(tag + ".up.conv.weight", {mid, e, 1, 1});
      f.up_conv_b = r.bias(tag + ".up.conv.bias", {mid});
      f.up_bn_gamma = r.gamma(tag + ".up.bn.gamma", mid);
      f.up_bn_beta = r.beta(tag + ".up.bn.beta", mid);
      f.up_bn_rmean = r.buf_zeros(tag + ".up.bn.running_mean", mid);
      f.up_bn_rvar = r.buf_ones(tag + ".up.bn.running_var", mid);
      blk.fcu = std::move(f);
    }

    r.keep = keep_trans;
    blk.trans = r.trans_block(block_tag("trans", i), e);
    blocks_.push_back(std::move(blk));
  }

  r.keep = keep_trans;
  final_ln_gamma_ = r.gamma("trans.final_ln.gamma", e);
  final_ln_beta_ = r.beta("trans.final_ln.beta", e);
  r.keep = keep_cnn;
  cnn_fc_w_ = r.trunc("head.cnn.fc.weight", {cfg_.num_classes, cfg_.stage_out_channels[3]});
  cnn_fc_b_ = r.bias("head.cnn.fc.bias", {cfg_.num_classes});
  r.keep = keep_trans;
  trans_fc_w_ = r.trunc("head.trans.fc.weight", {cfg_.num_classes, e});
  trans_fc_b_ = r.bias("head.trans.fc.bias", {cfg_.num_classes});
}

ForwardResult Conformer::forward(const Tensor& images, bool training, Tape* tape,
                                 ForwardHooks* hooks) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw ShapeError("expected [N,3,S,S] input, got " + images.shape_str());
  if (images.dim(2) != images.dim(3)) throw ShapeError("input must be square");
  if (images.dtype() != dt_)
    throw ContractError(std::string("model runs in ") + dtype_name(dt_) + ", input is " +
                        dtype_name(images.dtype()));
  const int s_in = static_cast<int>(images.dim(2));
  cfg_.validate_input(s_in);

  const bool run_cnn = cfg_.branch != Branch::transformer_only;
  const bool run_trans = cfg_.branch != Branch::cnn_only;
  const int64_t n = images.dim(0);
  const int grid = cfg_.stem_map(s_in) / cfg_.patch_stride;
  const int64_t k_cnt = static_cast<int64_t>(grid) * grid;
  const int64_t e = cfg_.embed_dim;

  Tensor x0 = stem_forward(images, stem_, training, tape);
  if (hooks && hooks->want_maps) hooks->stem_map = x0;

  Tensor map, tokens;
  for (int i = 1; i <= cfg_.total_blocks(); ++i) {
    BlockParams& blk = blocks_[static_cast<size_t>(i - 1)];
    const bool coupled = cfg_.block_coupled(i) && cfg_.branch == Branch::full;

    if (i == 1) {
      if (run_cnn) map = bottleneck_forward(x0, blk.units[0], nullptr, nullptr, training, tape);
      if (run_trans) {
        Tensor patches = patch_embed_forward(x0, patch_embed_, tape);  // [N,K,E]
        Tensor cls = add(cls_token_, Tensor::zeros({n, 1, e}, dt_), tape);
        tokens = concat({cls, patches}, 1, tape);
        if (cfg_.positional_embeddings) tokens = add(tokens, pos_embed_, tape);
        Tensor attn;
        tokens = transformer_block_forward(tokens, blk.trans, cfg_.num_heads, 1e-6, tape,
                                           hooks && hooks->want_attention ? &attn : nullptr);
        if (hooks && hooks->want_attention) hooks->attention.push_back(attn);
      }
    } else {
      Tensor tap;
      size_t next_unit = 0;
      if (run_cnn) {
        map = bottleneck_forward(map, blk.units[0], nullptr, coupled ? &tap : nullptr, training,
                                 tape);
        next_unit = 1;
      }
      Tensor fcu_cache;
      if (coupled) {
        Tensor patch_tokens = slice(tokens, 1, 1, k_cnt, tape);
        Tensor delta = fcu_down(tap, *blk.fcu, cfg_, grid, patch_tokens, tape, &fcu_cache);
        if (hooks && hooks->want_fcu) {
          hooks->tokens_before_fcu.push_back(tokens);
          hooks->fcu_deltas.push_back(delta);
          if (fcu_cache.defined()) hooks->fcu_attn_weights.push_back(fcu_cache);
        }
        Tensor cls = slice(tokens, 1, 0, 1, tape);
        tokens = concat({cls, add(patch_tokens, delta, tape)}, 1, tape);
        if (hooks && hooks->want_fcu) hooks->tokens_after_fcu.push_back(tokens);
      }
      if (run_trans) {
        Tensor attn;
        tokens = transformer_block_forward(tokens, blk.trans, cfg_.num_heads, 1e-6, tape,
                                           hooks && hooks->want_attention ? &attn : nullptr);
        if (hooks && hooks->want_attention) hooks->attention.push_back(attn);
      }
      if (coupled) {
        Tensor inj = fcu_up(tokens, *blk.fcu, cfg_, grid, static_cast<int>(map.dim(2)), training,
                            tape, fcu_cache);
        if (hooks && hooks->want_fcu) hooks->fcu_injections.push_back(inj);
        map = bottleneck_forward(map, blk.units[1], &inj, nullptr, training, tape);
        next_unit = 2;
      }
      if (run_cnn)
        for (size_t u = next_unit; u < blk.units.size(); ++u)
          map = bottleneck_forward(map, blk.units[u], nullptr, nullptr, training, tape);
    }
    if (hooks && hooks->want_maps) {
      if (run_cnn) hooks->block_maps.push_back(map);
      if (run_trans) hooks->block_tokens.push_back(tokens);
    }
  }

  ForwardResult res;
  if (run_cnn) res.cnn_logits = cnn_head_forward(map, cnn_fc_w_, cnn_fc_b_, tape);
  if (run_trans)
    res.trans_logits =
        trans_head_forward(tokens, final_ln_gamma_, final_ln_beta_, trans_fc_w_, trans_fc_b_,
                           1e-6, tape);
  return res;
}

Tensor Conformer::predict(const Tensor& images) {
  ForwardResult r = forward(images, false, nullptr, nullptr);
  if (r.cnn_logits.defined() && r.trans_logits.defined())
    return add(r.cnn_logits, r.trans_logits);
  return r.cnn_logits.defined() ? r.cnn_logits : r.trans_logits;
}

void Conformer::zero_fcu_projections() {
  for (BlockParams& blk : blocks_) {
    if (!blk.fcu) continue;
    FcuParams& f = *blk.fcu;
    for (Tensor* t : {&f.down_conv_w, &f.down_conv_b, &f.down_sample_w, &f.down_sample_b,
                      &f.attn_wq, &f.attn_wk, &f.attn_wv, &f.up_conv_w, &f.up_conv_b})
      if (t->defined()) fill_zero(*t);
  }
}

Tensor attention_sample_down(const Tensor& pc, const Tensor& pt, const Tensor& wq,
                             const Tensor& wk, const Tensor& wv, Tensor* weights_out,
                             Tape* tape) {
  if (pc.rank() != 3 || pt.rank() != 2)
    throw ShapeError("expected pc [K,n,E] and pt [K,E], got " + pc.shape_str() + " and " +
                     pt.shape_str());
  if (pc.dim(0) != pt.dim(0) || pc.dim(2) != pt.dim(1))
    throw ShapeError("pc/pt disagree: " + pc.shape_str() + " vs " + pt.shape_str());
  const int64_t k_cnt = pt.dim(0), e = pt.dim(1);
  Tensor q = matmul(pt, wq, false, tape);
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(e)), tape);
  q = reshape(q, {k_cnt, 1, e}, tape);
  Tensor key = matmul(pc, wk, false, tape);
  Tensor val = matmul(pc, wv, false, tape);
  Tensor w = softmax(matmul(q, key, true, tape), 2, tape);  // [K,1,n]
  if (weights_out) *weights_out = w;
  Tensor upd = reshape(matmul(w, val, false, tape), {k_cnt, e}, tape);
  return add(pt, upd, tape);
}

Tensor attention_sample_up(const Tensor& pc, const Tensor& pt, const Tensor& weights,
                           Tape* tape) {
  if (!weights.defined())
    throw ContractError("attention up-sampling re-uses the down-pass weights; none cached");
  if (pc.rank() != 3 || pt.rank() != 2 || weights.rank() != 3)
    throw ShapeError("expected pc [K,n,E], pt [K,E], weights [K,1,n]");
  if (weights.dim(0) != pc.dim(0) || weights.dim(1) != 1 || weights.dim(2) != pc.dim(1))
    throw ShapeError("weights " + weights.shape_str() + " do not match pc " + pc.shape_str());
  const int64_t k_cnt = pt.dim(0), e = pt.dim(1);
  Tensor wt = permute(weights, {0, 2, 1}, tape);  // [K,n,1]
  Tensor ptk = reshape(pt, {k_cnt, 1, e}, tape);
  Tensor upd = matmul(wt, ptk, false, tape);  // [K,n,E]
  return add(pc, upd, tape);
}

}  // namespace conformer
