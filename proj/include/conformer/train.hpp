#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "conformer/model.hpp"
#include "conformer/rng.hpp"
#include "conformer/tensor.hpp"

namespace conformer {

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t warmup_steps = 0;
  double loss_w_cnn = 1.0;
  double loss_w_trans = 1.0;
  uint64_t seed = 0;
  int64_t snapshot_interval = 0;  // checkpoint every N steps; 0 = final only
  int64_t max_steps = 0;          // stop after N optimizer steps; 0 = epochs decide
  void validate() const;
};

// w_cnn * CE(cnn_logits, labels) + w_trans * CE(trans_logits, labels).
// Scalar tensor, recorded on the tape when one is given.
Tensor dual_loss(const Tensor& cnn_logits, const Tensor& trans_logits,
                 const std::vector<int>& labels, double w_cnn, double w_trans,
                 Tape* tape = nullptr);

// Cosine schedule with optional linear warmup: lr ramps 0 -> base over
// [0, warmup), then follows base * 0.5 * (1 + cos(pi * progress)) down to 0
// at step == total_steps.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr, int64_t warmup_steps);

// One AdamW update on a single tensor, in place. step is 1-based (the value
// used for bias correction); moments match param's shape and start at zero.
// Decay is decoupled: param *= (1 - lr*wd) happens before the adaptive step.
void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step,
                  double lr, double weight_decay, double beta1, double beta2,
                  double eps = 1e-8);

// AdamW over a ParamStore: one moment pair per trainable entry. Entries whose
// decay flag is off (norm scales/shifts, class token, positional table) skip
// the weight-decay contraction.
class AdamW {
 public:
  struct Slot {
    std::string name;  // the param entry's name
    Tensor m, v;
  };

  explicit AdamW(ParamStore& store, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  // grads keyed by tensor id as produced by Tape::backward(); parameters the
  // graph never touched update with a zero gradient.
  void step(const std::unordered_map<int64_t, Tensor>& grads, double lr, double weight_decay);

  int64_t steps_done() const { return step_; }
  void set_steps_done(int64_t s) { step_ = s; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }

 private:
  ParamStore* store_;
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  int64_t step_ = 0;
};

// In-memory dataset. Images hold raw pixel values as [3,S,S] f32 tensors
// (nominally in [0,1]; the synthetic generator's exact-moment normalization
// may spill slightly outside). Boxes are inclusive {y0,x0,y1,x1} ground-truth
// shape bounds when the source provides them, one per item or empty.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::array<int, 4>> boxes;
  int num_classes = 0;
  int resolution = 0;
  std::string split;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
  void validate() const;
};

// Stacks the selected items into a model input batch [N,3,S,S], mapping raw
// pixels through (x - 0.5) / 0.25 — the network-side normalization used by
// every entry point (training, eval, visualization).
Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& indices);
std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& indices);

// Synthetic generator. kind "shapes": anti-aliased circles / squares /
// triangles / crosses (class = shape kind, round-robin over items) at random
// positions, scales and orientations over per-pixel noise backgrounds, then
// an affine per-channel correction that pins the dataset's channel moments to
// mean 0.5 / std 0.25 exactly. Deterministic in (classes, size, count, seed).
Dataset synth_dataset(const std::string& kind, int classes, int size, int count,
                      uint64_t seed);

// One subdirectory per class containing PNGs; classes and files sorted by
// name. Grayscale images are replicated to three channels. Empty class
// directories, non-square images or mixed sizes are errors.
Dataset load_image_folder(const std::string& path);

struct Checkpoint {
  uint32_t version = 1;
  int64_t step = 0;
  std::string config_json;  // the model's ConformerConfig snapshot
  // Every ParamStore entry (params and buffers, store order), then optimizer
  // moments as "adam.m.<param>" / "adam.v.<param>".
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::array<uint8_t, 32> rng_state{};
};

// Binary format: magic "CFMR", u32 version, u64 step, u32 config-JSON length
// + bytes, u32 tensor count, per tensor (u16 name length, name, u8 rank,
// rank x u64 dims, f32 payload), then the 32-byte RNG state. All integers and
// floats little-endian regardless of host. Loading refuses unknown versions
// and reports truncation or trailing bytes as corruption.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot/restore between a live model + optimizer + shuffle RNG and the
// checkpoint POD. Restore copies into the model's existing tensors (shapes
// must match) so every alias sees the loaded values.
Checkpoint make_checkpoint(const Conformer& model, const AdamW& opt, const Rng& rng,
                           int64_t step);
void restore_checkpoint(const Checkpoint& ck, Conformer& model, AdamW& opt, Rng& rng);

// One line of the metrics stream. Accuracies are measured on the step's own
// batch with the pre-update parameters.
struct StepRecord {
  int64_t step = 0;
  double lr = 0, loss = 0;
  double acc_cnn = 0, acc_trans = 0, acc_sum = 0;
  std::string to_json() const;
};

struct TrainOptions {
  std::string metrics_path;     // JSONL mirror of the records; empty = none
  std::string checkpoint_path;  // final checkpoint; periodic ones get ".step<N>"
  std::string resume_from;      // resume source; empty = fresh run
  bool echo = false;            // also print each record line to stdout
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::string checkpoint_path;
  int64_t steps_run = 0;
};

// Full training loop: builds the model from (model config, seed), runs
// AdamW + cosine over shuffled batches, records one StepRecord per step.
// Deterministic: batch order depends only on seed/epoch, and a resumed run
// continues the uninterrupted run's record stream bit-exactly. A non-finite
// loss aborts with the name of the first non-finite tensor.
TrainResult train(const ConformerConfig& model_cfg, const TrainConfig& tc,
                  const Dataset& ds, const TrainOptions& opts = {});

struct EvalTransform {
  enum class Kind { none, rotate, resize };
  Kind kind = Kind::none;
  double angle_deg = 0.0;  // rotate
  int size = 0;            // resize target
};

struct EvalResult {
  double acc_cnn = 0, acc_trans = 0, acc_sum = 0;
  int64_t count = 0;
};

// Accuracy over the dataset under an optional test-time transform. Rotation
// resamples bilinearly about the image center with zero fill (in raw pixel
// space, before normalization); resize uses bilinear_resize. Resizing a model
// with positional embeddings away from its native resolution is refused.
EvalResult evaluate(Conformer& model, const Dataset& ds, const EvalTransform& tf,
                    int batch_size = 64);

}  // namespace conformer
