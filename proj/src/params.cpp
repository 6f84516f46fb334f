#include "conformer/params.hpp"

namespace conformer {

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable, bool decay) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  if (!t.defined()) throw ContractError("undefined tensor for parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(t), trainable, decay});
  return entries_.back().tensor;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

int64_t ParamStore::trainable_elements() const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

}  // namespace conformer
