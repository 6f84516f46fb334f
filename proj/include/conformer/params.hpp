#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "conformer/tensor.hpp"

namespace conformer {

// Named parameter registry. Entries keep insertion order, which fixes both the
// RNG consumption order at init time and the serialization order in
// checkpoints. Buffers (running statistics) live here too but are not
// trainable. Tensors are shared, so in-place updates through an entry are seen
// by whoever else holds the tensor.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
    bool decay;  // participates in weight decay
  };

  Tensor& add(const std::string& name, Tensor t, bool trainable = true, bool decay = true);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::deque<Entry>& entries() const { return entries_; }
  std::deque<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  // Total element count over every entry (params and buffers).
  int64_t total_elements() const;
  // Element count over trainable entries only.
  int64_t trainable_elements() const;

 private:
  // deque keeps references from add()/at() valid across later insertions
  std::deque<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace conformer
