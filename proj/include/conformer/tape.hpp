#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "conformer/tensor.hpp"

namespace conformer {

// Reverse-mode tape. Ops that receive a non-null Tape* push one node per
// produced output; backward() replays nodes in reverse and accumulates
// gradients keyed by tensor id. Gradients always match the shape and dtype of
// the tensor they belong to.
class Tape {
 public:
  // Called with the gradient of the node output; implementations push
  // gradients for the node inputs via accumulate().
  using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

  void record(const Tensor& out, BackwardFn fn);
  size_t num_nodes() const { return nodes_.size(); }

  // Accumulates grad into the entry for t. Takes grad by value: an exclusively
  // owned buffer is adopted directly, a shared one (e.g. a reshaped view of an
  // upstream gradient) is copied first so later in-place additions cannot
  // corrupt it.
  void accumulate(const Tensor& t, Tensor grad);

  // Runs the recorded program backwards starting from root (seeded with ones)
  // and returns all accumulated gradients keyed by tensor id.
  std::unordered_map<int64_t, Tensor> backward(const Tensor& root);

 private:
  struct Node {
    int64_t out_id;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<int64_t, Tensor> grads_;
};

// Gradient for t out of a backward() result, or zeros if the graph never
// touched it (an unused parameter still reports a well-formed zero gradient).
Tensor grad_or_zeros(const std::unordered_map<int64_t, Tensor>& grads, const Tensor& t);

}  // namespace conformer
