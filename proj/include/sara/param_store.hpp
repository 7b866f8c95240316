// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sara/autodiff.hpp"
#include "sara/tensor.hpp"

namespace sara {

/// Only 2-D weight matrices take part in masking and low-rank analysis;
/// biases and other 1-D tensors stay frozen under selective tuning.
inline bool is_eligible(const Tensor& t) { return t.rank() == 2; }

/// Ordered collection of named parameter tensors.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const;
  std::vector<std::string> eligible_names() const;
  std::size_t eligible_count() const;
  std::size_t total_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Graph node for every parameter, keyed by name.
using ParamNodes = std::map<std::string, NodeId>;

}  // namespace sara
