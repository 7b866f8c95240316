// SPDX-License-Identifier: Apache-2.0
#include "sara/param_store.hpp"

#include <stdexcept>

namespace sara {

void ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).at(name));
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_) out.push_back(n);
  return out;
}

std::vector<std::string> ParamStore::eligible_names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_)
    if (is_eligible(t)) out.push_back(n);
  return out;
}

std::size_t ParamStore::eligible_count() const {
  std::size_t s = 0;
  for (const auto& [n, t] : entries_)
    if (is_eligible(t)) s += t.size();
  return s;
}

std::size_t ParamStore::total_count() const {
  std::size_t s = 0;
  for (const auto& [n, t] : entries_) s += t.size();
  return s;
}

}  // namespace sara
