// SPDX-License-Identifier: Apache-2.0
#include "sara/sparse_adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace sara {

SaraSession::SaraSession(ParamStore pretrained, SparseMask mask, SessionConfig config)
    : p0_(pretrained), p_(std::move(pretrained)), m0_(mask), m_(std::move(mask)), config_(config) {
  if (config_.rank_loss_interval == 0) throw std::invalid_argument("rank_loss_interval must be >= 1");
  for (const auto& [name, m] : m_) {
    const Tensor& p = p_.at(name);
    if (p.shape() != m->shape()) throw ShapeError("mask shape mismatch for '" + name + "'");
    for (auto i : m->indices()) p_learn_.push_back(p[i]);
  }
  opt_ = OptimizerState(p_learn_.size(), config_.adamw);
  rebuild_offsets();
}

SaraSession::SaraSession(ParamStore pretrained, ParamStore live, SparseMask initial_mask, SparseMask mask,
                         OptimizerState optimizer, std::size_t step, SessionConfig config)
    : p0_(std::move(pretrained)),
      p_(std::move(live)),
      m0_(std::move(initial_mask)),
      m_(std::move(mask)),
      opt_(std::move(optimizer)),
      config_(config),
      step_(step) {
  for (const auto& [name, m] : m_)
    for (auto i : m->indices()) p_learn_.push_back(p_.at(name)[i]);
  if (opt_.m.size() != p_learn_.size() || opt_.v.size() != p_learn_.size()) {
    throw ShapeError("optimizer state does not match the mask popcount");
  }
  if (!m_.is_subset_of(m0_)) throw std::invalid_argument("current mask is not a subset of the initial mask");
  rebuild_offsets();
}

void SaraSession::rebuild_offsets() {
  offsets_.clear();
  std::size_t off = 0;
  for (const auto& [name, m] : m_) {
    offsets_.push_back(off);
    off += m->popcount();
  }
}

std::span<const double> SaraSession::trainable_slice(const std::string& name) const {
  for (std::size_t k = 0; k < m_.entries().size(); ++k) {
    const auto& [n, m] = m_.entries()[k];
    if (n == name) return std::span<const double>(p_learn_).subspan(offsets_[k], m->popcount());
  }
  throw std::out_of_range("no trainable slice for '" + name + "'");
}

std::vector<std::size_t> SaraSession::readjust_steps() const {
  if (!config_.progressive || config_.readjust_events == 0 || config_.total_iterations == 0) return {};
  const std::size_t first =
      config_.progressive_iteration ? config_.progressive_iteration : config_.total_iterations / 2;
  std::vector<std::size_t> out;
  const std::size_t span = config_.total_iterations > first ? config_.total_iterations - first : 0;
  for (std::size_t i = 0; i < config_.readjust_events; ++i) out.push_back(first + i * span / config_.readjust_events);
  return out;
}

bool SaraSession::rank_loss_due() const {
  return config_.lambda_rank > 0.0 && (step_ % config_.rank_loss_interval) == 0;
}

void SaraSession::apply_gradient(std::span<const double> grad, double lr) {
  opt_.lr = lr;
  adamw_step(opt_, p_learn_, grad);
  for (std::size_t k = 0; k < m_.entries().size(); ++k) {
    const auto& [name, m] = m_.entries()[k];
    Tensor& p = p_.at(name);
    const auto& idx = m->indices();
    for (std::size_t q = 0; q < idx.size(); ++q) p[idx[q]] = p_learn_[offsets_[k] + q];
  }
  ++step_;
}

std::vector<NodeId> bind_unstructural(Graph& g, const SaraSession& session, ParamNodes& nodes) {
  std::vector<NodeId> leaves;
  for (const auto& [name, value] : session.params()) {
    auto mask = session.mask().find(name);
    if (mask && mask->popcount() > 0) {
      auto slice = session.trainable_slice(name);
      const NodeId leaf = g.leaf(Tensor({slice.size()}, std::vector<double>(slice.begin(), slice.end())));
      leaves.push_back(leaf);
      nodes[name] = g.unstructural_map(value, leaf, mask);
    } else {
      nodes[name] = g.parameter(value);
    }
  }
  return leaves;
}

NodeId add_rank_term(Graph& g, const SaraSession& session, const ParamNodes& nodes, NodeId task,
                     double& rank_value) {
  rank_value = 0.0;
  if (!session.rank_loss_due()) return task;
  const auto& cfg = session.config();
  const NodeId rank = rank_loss(g, nodes, session.pretrained(), session.initial_mask(), cfg.rank_operand);
  rank_value = g.value(rank).item();
  return g.add(task, g.scale(rank, cfg.lambda_rank));
}

MetricsRecord sara_step(SaraSession& session, const TaskLoss& task_loss, double lr) {
  Graph g(session.config().dtype);
  ParamNodes nodes;
  const auto leaves = bind_unstructural(g, session, nodes);
  const NodeId task = task_loss(g, nodes);

  MetricsRecord rec;
  rec.lr = lr;
  rec.task_loss = g.value(task).item();
  const NodeId total = add_rank_term(g, session, nodes, task, rec.rank_loss);

  Gradients grads = g.backward(total);
  std::vector<double> flat;
  flat.reserve(session.trainable().size());
  for (NodeId leaf : leaves) {
    const auto d = grads.at(leaf).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  double sq = 0.0;
  for (double x : flat) sq += x * x;
  rec.grad_norm = std::sqrt(sq);
  rec.grad_bytes = grads.report.param_grad_bytes();
  rec.report = std::move(grads.report);

  session.apply_gradient(flat, lr);
  rec.step = session.step();

  const auto due = session.readjust_steps();
  if (std::find(due.begin(), due.end(), session.step()) != due.end()) progressive_readjust(session);
  return rec;
}

const SparseMask& progressive_readjust(SaraSession& s) {
  const double theta = s.m0_.threshold();
  std::vector<SparseMask::Entry> entries;
  std::vector<double> learn, m1, m2;
  std::size_t selected = 0;

  for (std::size_t k = 0; k < s.m0_.entries().size(); ++k) {
    const auto& [name, initial] = s.m0_.entries()[k];
    const Tensor& p = s.p_.at(name);
    std::vector<std::uint32_t> keep;
    for (auto i : initial->indices())
      if (std::abs(p[i]) < theta) keep.push_back(i);

    // Carry moments for indices already trainable; newly re-entered ones start at zero.
    const auto current = s.m_.find(name);
    std::size_t offset = 0;
    for (std::size_t c = 0; c < s.m_.entries().size(); ++c)
      if (s.m_.entries()[c].first == name) offset = s.offsets_[c];
    const auto& cur_idx = current ? current->indices() : std::vector<std::uint32_t>{};
    std::size_t q = 0;
    for (auto i : keep) {
      while (q < cur_idx.size() && cur_idx[q] < i) ++q;
      learn.push_back(p[i]);
      if (q < cur_idx.size() && cur_idx[q] == i) {
        m1.push_back(s.opt_.m[offset + q]);
        m2.push_back(s.opt_.v[offset + q]);
      } else {
        m1.push_back(0.0);
        m2.push_back(0.0);
      }
    }
    selected += keep.size();
    entries.emplace_back(name, std::make_shared<const MatrixMask>(MatrixMask::from_indices(p.shape(), std::move(keep))));
  }

  if (selected == 0) {
    std::clog << "warning: progressive readjustment at step " << s.step_
              << " selected no parameters; keeping the previous mask\n";
    return s.m_;
  }
  s.m_ = SparseMask(std::move(entries), theta, s.m0_.mode());
  s.p_learn_ = std::move(learn);
  s.opt_.m = std::move(m1);
  s.opt_.v = std::move(m2);
  s.rebuild_offsets();
  return s.m_;
}

}  // namespace sara
