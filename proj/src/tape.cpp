#include "conformer/tape.hpp"

namespace conformer {

void Tape::record(const Tensor& out, BackwardFn fn) {
  nodes_.push_back(Node{out.id(), std::move(fn)});
}

void Tape::accumulate(const Tensor& t, Tensor grad) {
  if (grad.shape() != t.shape())
    throw ContractError("gradient shape " + grad.shape_str() + " does not match tensor " +
                        t.shape_str());
  auto it = grads_.find(t.id());
  if (it == grads_.end()) {
    // use_count == 1 means this call holds the only reference, safe to adopt.
    bool exclusive = grad.storage_use_count() == 1;
    if (!exclusive) grad = grad.clone();
    grads_.emplace(t.id(), std::move(grad));
    return;
  }
  Tensor& acc = it->second;
  dispatch_dtype(acc.dtype(), [&]<class T>() {
    T* a = acc.data<T>();
    const T* g = grad.data<T>();
    for (int64_t i = 0; i < acc.numel(); ++i) a[i] += g[i];
  });
}

std::unordered_map<int64_t, Tensor> Tape::backward(const Tensor& root) {
  grads_.clear();
  grads_.emplace(root.id(), ones_like(root));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto g = grads_.find(it->out_id);
    if (g == grads_.end()) continue;  // output never influenced the root
    it->fn(g->second, *this);
  }
  return grads_;
}

Tensor grad_or_zeros(const std::unordered_map<int64_t, Tensor>& grads, const Tensor& t) {
  auto it = grads.find(t.id());
  if (it == grads.end()) return zeros_like(t);
  return it->second;
}

}  // namespace conformer
