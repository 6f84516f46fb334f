#include "conformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "conformer/image.hpp"
#include "conformer/ops.hpp"
#include "conformer/serialize.hpp"

namespace conformer {

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'F', 'M', 'R'};

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Epoch permutations come from a keyed RNG rather than one sequential stream
// so a resume landing mid-epoch can regenerate the in-flight epoch's order
// without replaying earlier epochs.
std::vector<int64_t> epoch_permutation(int64_t n, uint64_t seed, int64_t epoch) {
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(mix64(mix64(seed) ^ static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::vector<int> pred = argmax_rows(logits);
  int64_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Signed distance helpers in pixel units; negative inside. p is already in
// the shape's own (rotated, centered) frame.
double sd_box(double px, double py, double hw, double hh) {
  double qx = std::abs(px) - hw, qy = std::abs(py) - hh;
  double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

double shape_sdf(int kind, double px, double py, double r) {
  switch (kind) {
    case 0:  // circle
      return std::sqrt(px * px + py * py) - r;
    case 1:  // square
      return sd_box(px, py, 0.78 * r, 0.78 * r);
    case 2: {  // equilateral triangle, circumradius r
      const double k = std::sqrt(3.0);
      double a = 0.866 * r;  // half side length
      double x = std::abs(px) - a;
      double y = py + a / k;
      if (x + k * y > 0.0) {
        double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
        x = nx, y = ny;
      }
      x -= std::clamp(x, -2.0 * a, 0.0);
      double len = std::sqrt(x * x + y * y);
      return y > 0.0 ? -len : len;
    }
    default: {  // cross
      double t = 0.34 * r;
      return std::min(sd_box(px, py, r, t), sd_box(px, py, t, r));
    }
  }
}

void throw_non_finite(const Conformer& model, const ForwardResult& out, const Tensor& loss,
                      int64_t step) {
  std::string culprit = "loss";
  for (const auto& e : model.params().entries()) {
    if (!all_finite(e.tensor)) {
      culprit = e.name;
      break;
    }
  }
  if (culprit == "loss") {
    bool has_cnn = model.config().branch != Branch::transformer_only;
    bool has_trans = model.config().branch != Branch::cnn_only;
    if (has_cnn && !all_finite(out.cnn_logits)) culprit = "cnn_logits";
    else if (has_trans && !all_finite(out.trans_logits)) culprit = "trans_logits";
  }
  (void)loss;
  throw Error("training aborted at step " + std::to_string(step) +
              ": non-finite values in " + culprit);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train config: learning rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train config: weight decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("train config: betas must lie in [0, 1)");
  if (warmup_steps < 0) throw ConfigError("train config: warmup steps must be >= 0");
  if (loss_w_cnn < 0.0 || loss_w_trans < 0.0)
    throw ConfigError("train config: loss weights must be >= 0");
  if (snapshot_interval < 0) throw ConfigError("train config: snapshot interval must be >= 0");
  if (max_steps < 0) throw ConfigError("train config: max steps must be >= 0");
}

Tensor dual_loss(const Tensor& cnn_logits, const Tensor& trans_logits,
                 const std::vector<int>& labels, double w_cnn, double w_trans, Tape* tape) {
  Tensor lc = cross_entropy(cnn_logits, labels, tape);
  Tensor lt = cross_entropy(trans_logits, labels, tape);
  return add(scale(lc, w_cnn, tape), scale(lt, w_trans, tape), tape);
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr, int64_t warmup_steps) {
  if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
  if (step < 0) throw ContractError("cosine_lr: step must be >= 0");
  if (warmup_steps < 0) throw ContractError("cosine_lr: warmup_steps must be >= 0");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  double denom = static_cast<double>(std::max<int64_t>(1, total_steps - warmup_steps));
  double progress = static_cast<double>(step - warmup_steps) / denom;
  progress = std::clamp(progress, 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step,
                  double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (step < 1) throw ContractError("adamw_update: step must be >= 1");
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape())
    throw ShapeError("adamw_update: param/grad/moment shapes must match");
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  dispatch_dtype(param.dtype(), [&]<class T>() {
    T* p = param.data<T>();
    const T* g = grad.data<T>();
    T* mp = m.data<T>();
    T* vp = v.data<T>();
    for (int64_t i = 0; i < param.numel(); ++i) {
      double pi = static_cast<double>(p[i]) * (1.0 - lr * weight_decay);
      double gi = static_cast<double>(g[i]);
      double mi = beta1 * static_cast<double>(mp[i]) + (1.0 - beta1) * gi;
      double vi = beta2 * static_cast<double>(vp[i]) + (1.0 - beta2) * gi * gi;
      mp[i] = static_cast<T>(mi);
      vp[i] = static_cast<T>(vi);
      double mhat = mi / bc1, vhat = vi / bc2;
      p[i] = static_cast<T>(pi - lr * mhat / (std::sqrt(vhat) + eps));
    }
  });
}

AdamW::AdamW(ParamStore& store, double beta1, double beta2, double eps)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    slots_.push_back({e.name, Tensor::zeros(e.tensor.shape(), e.tensor.dtype()),
                      Tensor::zeros(e.tensor.shape(), e.tensor.dtype())});
  }
}

void AdamW::step(const std::unordered_map<int64_t, Tensor>& grads, double lr,
                 double weight_decay) {
  ++step_;
  size_t si = 0;
  for (auto& e : store_->entries()) {
    if (!e.trainable) continue;
    Slot& slot = slots_[si++];
    Tensor g = grad_or_zeros(grads, e.tensor);
    adamw_update(e.tensor, g, slot.m, slot.v, step_, lr, e.decay ? weight_decay : 0.0,
                 beta1_, beta2_, eps_);
  }
}

void Dataset::validate() const {
  if (num_classes < 1) throw ConfigError("dataset: class count must be >= 1");
  if (labels.size() != images.size()) throw ConfigError("dataset: one label per image required");
  if (!boxes.empty() && boxes.size() != images.size())
    throw ConfigError("dataset: boxes must be absent or one per image");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw ConfigError("dataset: label " + std::to_string(l) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  for (const Tensor& img : images) {
    if (img.shape().size() != 3 || img.shape()[0] != 3 || img.shape()[1] != resolution ||
        img.shape()[2] != resolution)
      throw ConfigError("dataset: every image must be [3," + std::to_string(resolution) + "," +
                        std::to_string(resolution) + "]");
  }
}

Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  int64_t s = ds.resolution;
  Tensor out = Tensor::empty({static_cast<int64_t>(indices.size()), 3, s, s}, DType::f32);
  float* dst = out.data<float>();
  int64_t plane = 3 * s * s;
  for (size_t i = 0; i < indices.size(); ++i) {
    int64_t idx = indices[i];
    if (idx < 0 || idx >= ds.size()) throw ContractError("make_batch: index out of range");
    const float* src = ds.images[static_cast<size_t>(idx)].data<float>();
    float* d = dst + static_cast<int64_t>(i) * plane;
    // (x - 0.5) / 0.25
    for (int64_t j = 0; j < plane; ++j) d[j] = src[j] * 4.0f - 2.0f;
  }
  return out;
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= ds.size()) throw ContractError("batch_labels: index out of range");
    out.push_back(ds.labels[static_cast<size_t>(idx)]);
  }
  return out;
}

Dataset synth_dataset(const std::string& kind, int classes, int size, int count,
                      uint64_t seed) {
  if (kind != "shapes")
    throw ConfigError("synth_dataset: unknown kind '" + kind + "' (only 'shapes')");
  if (classes < 2 || classes > 4)
    throw ConfigError("synth_dataset: shapes supports 2..4 classes");
  if (size < 16) throw ConfigError("synth_dataset: size must be >= 16");
  if (count < 1) throw ConfigError("synth_dataset: count must be >= 1");

  Dataset ds;
  ds.num_classes = classes;
  ds.resolution = size;
  ds.split = "synth";
  Rng rng(seed);
  double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};

  for (int i = 0; i < count; ++i) {
    int label = i % classes;
    double r = size * rng.uniform(0.14, 0.30);
    double margin = r + 2.0;
    double cy = rng.uniform(margin, size - margin);
    double cx = rng.uniform(margin, size - margin);
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double ct = std::cos(theta), st = std::sin(theta);
    double fg[3];
    for (double& f : fg) f = rng.uniform(0.55, 0.95);

    Tensor img = Tensor::empty({3, size, size}, DType::f32);
    float* px = img.data<float>();
    int y0 = size, x0 = size, y1 = -1, x1 = -1;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double dy = y - cy, dx = x - cx;
        double ry = ct * dy + st * dx;   // rotate into the shape frame
        double rx = -st * dy + ct * dx;
        double d = shape_sdf(label, rx, ry, r);
        double cov = std::clamp(0.5 - d, 0.0, 1.0);
        if (cov > 0.5) {
          y0 = std::min(y0, y), y1 = std::max(y1, y);
          x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
        for (int c = 0; c < 3; ++c) {
          double bg = 0.25 + 0.08 * rng.uniform(-1.0, 1.0);
          double v = bg + cov * (fg[c] - bg);
          px[(c * size + y) * size + x] = static_cast<float>(v);
          sum[c] += v;
          sumsq[c] += v * v;
        }
      }
    ds.images.push_back(img);
    ds.labels.push_back(label);
    ds.boxes.push_back({y0, x0, y1, x1});
  }

  // Affine per-channel correction to exact dataset moments: mean 0.5, std 0.25.
  double npix = static_cast<double>(count) * size * size;
  for (int c = 0; c < 3; ++c) {
    double mean = sum[c] / npix;
    double var = sumsq[c] / npix - mean * mean;
    double gain = 0.25 / std::sqrt(std::max(var, 1e-12));
    for (Tensor& img : ds.images) {
      float* px = img.data<float>() + static_cast<int64_t>(c) * size * size;
      for (int64_t j = 0; j < static_cast<int64_t>(size) * size; ++j)
        px[j] = static_cast<float>((px[j] - mean) * gain + 0.5);
    }
  }
  return ds;
}

Dataset load_image_folder(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path))
    throw IoError("load_image_folder: not a directory: " + path);
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.empty())
    throw IoError("load_image_folder: no class subdirectories under " + path);

  Dataset ds;
  ds.num_classes = static_cast<int>(classes.size());
  ds.split = fs::path(path).filename().string();
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(path) / classes[ci]))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw IoError("load_image_folder: class directory '" + classes[ci] + "' has no PNGs");
    for (const std::string& file : files) {
      Image im = read_png(file);
      if (im.width != im.height)
        throw IoError("load_image_folder: non-square image " + file + " (" +
                      std::to_string(im.width) + "x" + std::to_string(im.height) +
                      "); no silent resize");
      if (ds.resolution == 0) ds.resolution = im.width;
      if (im.width != ds.resolution)
        throw IoError("load_image_folder: mixed image sizes (" + file + " is " +
                      std::to_string(im.width) + ", expected " +
                      std::to_string(ds.resolution) + ")");
      Tensor t = image_to_tensor(im);
      if (im.channels == 1) {
        Tensor rgb = Tensor::empty({3, im.height, im.width}, DType::f32);
        const float* s = t.data<float>();
        float* d = rgb.data<float>();
        int64_t plane = static_cast<int64_t>(im.height) * im.width;
        for (int c = 0; c < 3; ++c) std::memcpy(d + c * plane, s, plane * sizeof(float));
        t = rgb;
      }
      ds.images.push_back(t);
      ds.labels.push_back(static_cast<int>(ci));
    }
  }
  return ds;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  io::write_bytes(f, kCheckpointMagic, 4);
  io::write_u32(f, ck.version);
  io::write_u64(f, static_cast<uint64_t>(ck.step));
  io::write_u32(f, static_cast<uint32_t>(ck.config_json.size()));
  io::write_bytes(f, ck.config_json.data(), ck.config_json.size());
  io::write_u32(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xffff) throw IoError("save_checkpoint: tensor name too long");
    io::write_u16(f, static_cast<uint16_t>(name.size()));
    io::write_bytes(f, name.data(), name.size());
    io::write_u8(f, static_cast<uint8_t>(t.shape().size()));
    for (int64_t d : t.shape()) io::write_u64(f, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i)
      io::write_f32(f, static_cast<float>(t.scalar_at(i)));
  }
  io::write_bytes(f, ck.rng_state.data(), ck.rng_state.size());
  if (!f) throw IoError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  io::read_bytes(f, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("load_checkpoint: bad magic, not a checkpoint file");
  Checkpoint ck;
  ck.version = io::read_u32(f);
  if (ck.version != 1)
    throw IoError("load_checkpoint: unsupported version " + std::to_string(ck.version));
  ck.step = static_cast<int64_t>(io::read_u64(f));
  uint32_t json_len = io::read_u32(f);
  if (json_len > (1u << 20)) throw IoError("load_checkpoint: implausible config size");
  ck.config_json.resize(json_len);
  io::read_bytes(f, ck.config_json.data(), json_len);
  uint32_t count = io::read_u32(f);
  if (count > (1u << 20)) throw IoError("load_checkpoint: implausible tensor count");
  ck.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = io::read_u16(f);
    std::string name(name_len, '\0');
    io::read_bytes(f, name.data(), name_len);
    uint8_t rank = io::read_u8(f);
    if (rank > 8) throw IoError("load_checkpoint: implausible tensor rank");
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int64_t>(io::read_u64(f));
      if (d < 1 || numel > (int64_t(1) << 33) / std::max<int64_t>(d, 1))
        throw IoError("load_checkpoint: implausible tensor dims");
      numel *= d;
    }
    Tensor t = Tensor::empty(dims, DType::f32);
    float* p = t.data<float>();
    for (int64_t j = 0; j < t.numel(); ++j) p[j] = io::read_f32(f);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  io::read_bytes(f, ck.rng_state.data(), ck.rng_state.size());
  if (f.peek() != std::char_traits<char>::eof())
    throw IoError("load_checkpoint: trailing bytes after checkpoint payload");
  return ck;
}

Checkpoint make_checkpoint(const Conformer& model, const AdamW& opt, const Rng& rng,
                           int64_t step) {
  Checkpoint ck;
  ck.step = step;
  ck.config_json = model.config().to_json_string();
  for (const auto& e : model.params().entries()) ck.tensors.emplace_back(e.name, e.tensor);
  for (const auto& slot : opt.slots()) {
    ck.tensors.emplace_back("adam.m." + slot.name, slot.m);
    ck.tensors.emplace_back("adam.v." + slot.name, slot.v);
  }
  ck.rng_state = rng.state_bytes();
  return ck;
}

void restore_checkpoint(const Checkpoint& ck, Conformer& model, AdamW& opt, Rng& rng) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
  size_t expected = model.params().size() + 2 * opt.slots().size();
  if (by_name.size() != ck.tensors.size() || ck.tensors.size() != expected)
    throw IoError("restore_checkpoint: tensor inventory mismatch (" +
                  std::to_string(ck.tensors.size()) + " in file, " +
                  std::to_string(expected) + " expected)");

  auto copy_into = [](const std::string& name, const Tensor& src, Tensor& dst) {
    if (src.shape() != dst.shape())
      throw IoError("restore_checkpoint: shape mismatch for " + name);
    for (int64_t i = 0; i < dst.numel(); ++i) dst.set_scalar(i, src.scalar_at(i));
  };
  auto lookup = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("restore_checkpoint: missing tensor " + name);
    return *it->second;
  };

  for (auto& e : model.params().entries()) copy_into(e.name, lookup(e.name), e.tensor);
  for (auto& slot : opt.slots()) {
    copy_into(slot.name, lookup("adam.m." + slot.name), slot.m);
    copy_into(slot.name, lookup("adam.v." + slot.name), slot.v);
  }
  opt.set_steps_done(ck.step);
  rng.set_state_bytes(ck.rng_state);
}

std::string StepRecord::to_json() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"step\":%lld,\"lr\":%.17g,\"loss\":%.17g,\"acc_cnn\":%.17g,"
                "\"acc_trans\":%.17g,\"acc_sum\":%.17g}",
                static_cast<long long>(step), lr, loss, acc_cnn, acc_trans, acc_sum);
  return buf;
}

TrainResult train(const ConformerConfig& model_cfg, const TrainConfig& tc, const Dataset& ds,
                  const TrainOptions& opts) {
  model_cfg.validate();
  tc.validate();
  ds.validate();
  model_cfg.validate_input(ds.resolution);
  if (ds.num_classes != model_cfg.num_classes)
    throw ConfigError("train: dataset has " + std::to_string(ds.num_classes) +
                      " classes but the model expects " +
                      std::to_string(model_cfg.num_classes));

  int64_t n = ds.size();
  int64_t bpe = (n + tc.batch_size - 1) / tc.batch_size;
  int64_t total = tc.max_steps > 0 ? tc.max_steps : static_cast<int64_t>(tc.epochs) * bpe;

  Conformer model(model_cfg, tc.seed);
  AdamW opt(model.params(), tc.beta1, tc.beta2);
  Rng shuffle_rng(mix64(tc.seed ^ 0x736875666665ull));  // dedicated shuffle stream

  int64_t start = 0;
  if (!opts.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(opts.resume_from);
    if (ck.config_json != model_cfg.to_json_string())
      throw ConfigError("train: checkpoint was written for a different model config");
    restore_checkpoint(ck, model, opt, shuffle_rng);
    start = ck.step;
  }

  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    metrics.open(opts.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("train: cannot open metrics file " + opts.metrics_path);
  }

  bool has_cnn = model_cfg.branch != Branch::transformer_only;
  bool has_trans = model_cfg.branch != Branch::cnn_only;

  TrainResult res;
  std::vector<int64_t> perm;
  int64_t perm_epoch = -1;
  for (int64_t step = start; step < total; ++step) {
    int64_t epoch = step / bpe, pos = step % bpe;
    if (epoch != perm_epoch) {
      perm = epoch_permutation(n, tc.seed, epoch);
      perm_epoch = epoch;
    }
    int64_t lo = pos * tc.batch_size;
    int64_t hi = std::min<int64_t>(n, lo + tc.batch_size);
    std::vector<int64_t> indices(perm.begin() + lo, perm.begin() + hi);
    Tensor x = make_batch(ds, indices);
    std::vector<int> labels = batch_labels(ds, indices);

    double lr = cosine_lr(step, total, tc.lr, tc.warmup_steps);
    Tape tape;
    ForwardResult out = model.forward(x, /*training=*/true, &tape);
    Tensor loss;
    if (has_cnn && has_trans)
      loss = dual_loss(out.cnn_logits, out.trans_logits, labels, tc.loss_w_cnn,
                       tc.loss_w_trans, &tape);
    else if (has_cnn)
      loss = scale(cross_entropy(out.cnn_logits, labels, &tape), tc.loss_w_cnn, &tape);
    else
      loss = scale(cross_entropy(out.trans_logits, labels, &tape), tc.loss_w_trans, &tape);
    if (!all_finite(loss)) throw_non_finite(model, out, loss, step);

    auto grads = tape.backward(loss);
    opt.step(grads, lr, tc.weight_decay);

    StepRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.loss = loss.scalar_at(0);
    rec.acc_cnn = has_cnn ? accuracy(out.cnn_logits, labels) : 0.0;
    rec.acc_trans = has_trans ? accuracy(out.trans_logits, labels) : 0.0;
    if (has_cnn && has_trans)
      rec.acc_sum = accuracy(add(out.cnn_logits, out.trans_logits), labels);
    else
      rec.acc_sum = has_cnn ? rec.acc_cnn : rec.acc_trans;
    res.records.push_back(rec);
    if (metrics.is_open()) metrics << rec.to_json() << '\n';
    if (opts.echo) std::cout << rec.to_json() << '\n';

    int64_t done = step + 1;
    if (!opts.checkpoint_path.empty() && tc.snapshot_interval > 0 && done < total &&
        done % tc.snapshot_interval == 0)
      save_checkpoint(opts.checkpoint_path + ".step" + std::to_string(done),
                      make_checkpoint(model, opt, shuffle_rng, done));
  }

  if (!opts.checkpoint_path.empty()) {
    save_checkpoint(opts.checkpoint_path, make_checkpoint(model, opt, shuffle_rng, total));
    res.checkpoint_path = opts.checkpoint_path;
  }
  res.steps_run = total - start;
  return res;
}

EvalResult evaluate(Conformer& model, const Dataset& ds, const EvalTransform& tf,
                    int batch_size) {
  ds.validate();
  if (batch_size < 1) throw ContractError("evaluate: batch size must be >= 1");
  const ConformerConfig& cfg = model.config();
  if (ds.num_classes != cfg.num_classes)
    throw ConfigError("evaluate: dataset class count does not match the model");

  if (tf.kind == EvalTransform::Kind::resize) {
    if (tf.size < 1) throw ConfigError("evaluate: resize target must be positive");
    if (cfg.positional_embeddings && tf.size != cfg.input_size)
      throw ConfigError(
          "evaluate: resizing to " + std::to_string(tf.size) + " would require " +
          "interpolating the positional embedding table, which is out of scope for " +
          "this model family; rebuild the model without positional embeddings");
    cfg.validate_input(tf.size);
  } else {
    cfg.validate_input(ds.resolution);
  }

  bool has_cnn = cfg.branch != Branch::transformer_only;
  bool has_trans = cfg.branch != Branch::cnn_only;
  int64_t correct_cnn = 0, correct_trans = 0, correct_sum = 0;

  for (int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    int64_t hi = std::min<int64_t>(ds.size(), lo + batch_size);
    std::vector<int64_t> indices(hi - lo);
    for (int64_t i = lo; i < hi; ++i) indices[i - lo] = i;

    // Transform raw pixels first, then normalize: the zero fill is black in
    // image space, not mid-gray.
    int64_t s = ds.resolution;
    Tensor raw = Tensor::empty({hi - lo, 3, s, s}, DType::f32);
    float* dst = raw.data<float>();
    for (int64_t i = 0; i < hi - lo; ++i)
      std::memcpy(dst + i * 3 * s * s, ds.images[static_cast<size_t>(lo + i)].data<float>(),
                  static_cast<size_t>(3 * s * s) * sizeof(float));
    if (tf.kind == EvalTransform::Kind::rotate)
      raw = rotate_bilinear(raw, tf.angle_deg);
    else if (tf.kind == EvalTransform::Kind::resize)
      raw = bilinear_resize(raw, tf.size, tf.size);
    float* p = raw.data<float>();
    for (int64_t i = 0; i < raw.numel(); ++i) p[i] = p[i] * 4.0f - 2.0f;

    ForwardResult out = model.forward(raw, /*training=*/false);
    std::vector<int> labels = batch_labels(ds, indices);
    auto count = [&](const Tensor& logits, int64_t& acc) {
      std::vector<int> pred = argmax_rows(logits);
      for (size_t i = 0; i < labels.size(); ++i) acc += pred[i] == labels[i];
    };
    if (has_cnn) count(out.cnn_logits, correct_cnn);
    if (has_trans) count(out.trans_logits, correct_trans);
    if (has_cnn && has_trans)
      count(add(out.cnn_logits, out.trans_logits), correct_sum);
    else
      correct_sum = has_cnn ? correct_cnn : correct_trans;
  }

  EvalResult r;
  r.count = ds.size();
  double denom = static_cast<double>(std::max<int64_t>(1, ds.size()));
  r.acc_cnn = static_cast<double>(correct_cnn) / denom;
  r.acc_trans = static_cast<double>(correct_trans) / denom;
  r.acc_sum = static_cast<double>(correct_sum) / denom;
  return r;
}

}  // namespace conformer
