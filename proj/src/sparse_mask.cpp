// SPDX-License-Identifier: Apache-2.0
#include "sara/sparse_mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sara/rng.hpp"

namespace sara {
namespace {

struct Candidate {
  double magnitude;
  std::uint32_t matrix;  // rank of the matrix name in lexicographic order
  std::uint32_t index;
};

struct Pool {
  std::vector<std::string> names;  // lexicographic
  std::vector<Candidate> items;
};

Pool eligible_pool(const ParamStore& p0) {
  Pool pool;
  pool.names = p0.eligible_names();
  std::sort(pool.names.begin(), pool.names.end());
  for (std::uint32_t m = 0; m < pool.names.size(); ++m) {
    const Tensor& t = p0.at(pool.names[m]);
    for (std::uint32_t i = 0; i < t.size(); ++i) pool.items.push_back({std::abs(t[i]), m, i});
  }
  return pool;
}

void check_budget(const ParamStore& p0, std::size_t k) {
  const std::size_t n = p0.eligible_count();
  if (k == 0 || k > n) {
    throw std::invalid_argument("budget k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
}

// Builds per-matrix masks (in ParamStore order) from the first k pool items.
SparseMask from_selection(const ParamStore& p0, const Pool& pool, std::size_t k, double threshold,
                          SelectionMode mode) {
  std::vector<std::vector<std::uint32_t>> picked(pool.names.size());
  for (std::size_t i = 0; i < k; ++i) picked[pool.items[i].matrix].push_back(pool.items[i].index);
  std::vector<SparseMask::Entry> entries;
  for (const auto& name : p0.eligible_names()) {
    const auto m = static_cast<std::size_t>(std::lower_bound(pool.names.begin(), pool.names.end(), name) -
                                            pool.names.begin());
    auto idx = std::move(picked[m]);
    std::sort(idx.begin(), idx.end());
    entries.emplace_back(name, std::make_shared<const MatrixMask>(
                                   MatrixMask::from_indices(p0.at(name).shape(), std::move(idx))));
  }
  return SparseMask(std::move(entries), threshold, mode);
}

bool by_key(const Candidate& a, const Candidate& b) {
  if (a.matrix != b.matrix) return a.matrix < b.matrix;
  return a.index < b.index;
}

double implied_threshold(const Pool& pool, std::size_t k) {
  if (k < pool.items.size()) {
    double t = std::numeric_limits<double>::infinity();
    for (std::size_t i = k; i < pool.items.size(); ++i) t = std::min(t, pool.items[i].magnitude);
    return t;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

SparseMask::SparseMask(std::vector<Entry> entries, double threshold, SelectionMode mode)
    : entries_(std::move(entries)), threshold_(threshold), mode_(mode) {}

std::shared_ptr<const MatrixMask> SparseMask::find(const std::string& name) const {
  for (const auto& [n, m] : entries_)
    if (n == name) return m;
  return nullptr;
}

const MatrixMask& SparseMask::at(const std::string& name) const {
  auto m = find(name);
  if (!m) throw std::out_of_range("no mask for parameter '" + name + "'");
  return *m;
}

std::size_t SparseMask::popcount() const {
  std::size_t s = 0;
  for (const auto& [n, m] : entries_) s += m->popcount();
  return s;
}

std::size_t SparseMask::total() const {
  std::size_t s = 0;
  for (const auto& [n, m] : entries_) s += m->size();
  return s;
}

double SparseMask::fraction() const {
  const std::size_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(t);
}

bool SparseMask::is_subset_of(const SparseMask& other) const {
  for (const auto& [n, m] : entries_) {
    auto o = other.find(n);
    if (!o || !m->is_subset_of(*o)) return false;
  }
  return true;
}

bool operator==(const SparseMask& a, const SparseMask& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].first != b.entries_[i].first) return false;
    if (!(*a.entries_[i].second == *b.entries_[i].second)) return false;
  }
  return true;
}

SparseMask compute_mask(const ParamStore& p0, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold must be positive");
  std::vector<SparseMask::Entry> entries;
  std::size_t selected = 0;
  for (const auto& name : p0.eligible_names()) {
    const Tensor& t = p0.at(name);
    std::vector<bool> bits(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) bits[i] = std::abs(t[i]) < threshold;
    auto mask = std::make_shared<const MatrixMask>(t.shape(), std::move(bits));
    selected += mask->popcount();
    entries.emplace_back(name, std::move(mask));
  }
  if (selected == 0) throw std::invalid_argument("threshold selects zero parameters");
  return SparseMask(std::move(entries), threshold, SelectionMode::absolute_threshold);
}

SparseMask compute_mask_by_budget(const ParamStore& p0, std::size_t k) {
  check_budget(p0, k);
  Pool pool = eligible_pool(p0);
  std::stable_sort(pool.items.begin(), pool.items.end(), [](const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    return by_key(a, b);
  });
  const double t = implied_threshold(pool, k);
  return from_selection(p0, pool, k, t, SelectionMode::global_budget);
}

SparseMask select_largest(const ParamStore& p0, std::size_t k) {
  check_budget(p0, k);
  Pool pool = eligible_pool(p0);
  std::stable_sort(pool.items.begin(), pool.items.end(), [](const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    return by_key(a, b);
  });
  return from_selection(p0, pool, k, 0.0, SelectionMode::global_budget);
}

SparseMask select_random(const ParamStore& p0, std::size_t k, std::uint64_t seed) {
  check_budget(p0, k);
  Pool pool = eligible_pool(p0);
  Rng rng = Rng::stream(seed, "select_random");
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(pool.items.size() - i);
    std::swap(pool.items[i], pool.items[j]);
  }
  return from_selection(p0, pool, k, 0.0, SelectionMode::global_budget);
}

SparseMask full_mask(const ParamStore& p0) {
  std::vector<SparseMask::Entry> entries;
  for (const auto& name : p0.eligible_names())
    entries.emplace_back(name, std::make_shared<const MatrixMask>(MatrixMask::all(p0.at(name).shape(), true)));
  return SparseMask(std::move(entries), std::numeric_limits<double>::infinity(), SelectionMode::global_budget);
}

}  // namespace sara
