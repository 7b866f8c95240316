// SPDX-License-Identifier: Apache-2.0
#include "sara/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sara {

Tensor LoraAdapter::delta() const {
  Tensor d = matmul(B, A);
  for (double& v : d.data()) v *= scale;
  return d;
}

std::vector<LoraAdapter> attach_lora(const ParamStore& params, const LoraConfig& config, Rng& rng) {
  if (config.rank == 0) throw std::invalid_argument("LoRA rank must be positive");
  std::vector<LoraAdapter> out;
  for (const auto& name : params.eligible_names()) {
    const Tensor& w = params.at(name);
    const std::size_t m = w.rows(), n = w.cols();
    const std::size_t r = std::min({config.rank, m, n});
    LoraAdapter a{.target = name, .A = Tensor({r, n}), .B = Tensor({m, r}), .rank = r,
                  .scale = config.alpha / static_cast<double>(config.rank)};
    const double sd = 1.0 / std::sqrt(static_cast<double>(r));
    for (double& v : a.A.data()) v = sd * rng.normal();
    out.push_back(std::move(a));
  }
  return out;
}

NodeId lora_forward(Graph& g, NodeId x, NodeId weight, NodeId bias, const LoraNodes& adapter) {
  const NodeId base = linear(g, x, weight, bias);
  NodeId branch;
  {
    TagScope scope(g, "adapter");
    const NodeId down = g.matmul(x, adapter.A, /*transpose_rhs=*/true);
    branch = g.scale(g.matmul(down, adapter.B, /*transpose_rhs=*/true), adapter.scale);
  }
  return g.add(base, branch);
}

LoraSession::LoraSession(ParamStore pretrained, std::vector<LoraAdapter> adapters, AdamWConfig adamw, DType dtype)
    : p0_(std::move(pretrained)), adapters_(std::move(adapters)), dtype_(dtype) {
  opt_ = OptimizerState(trainable_count(), adamw);
}

std::size_t LoraSession::trainable_count() const {
  std::size_t n = 0;
  for (const auto& a : adapters_) n += a.A.size() + a.B.size();
  return n;
}

ParamStore LoraSession::merged() const {
  ParamStore out;
  for (const auto& [name, value] : p0_) {
    Tensor w = value;
    for (const auto& a : adapters_)
      if (a.target == name) {
        const Tensor d = a.delta();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += d[i];
      }
    out.add(name, std::move(w));
  }
  return out;
}

void LoraSession::apply_gradient(std::span<const double> grad, double lr) {
  std::vector<double> flat;
  flat.reserve(trainable_count());
  for (const auto& a : adapters_) {
    flat.insert(flat.end(), a.A.data().begin(), a.A.data().end());
    flat.insert(flat.end(), a.B.data().begin(), a.B.data().end());
  }
  opt_.lr = lr;
  adamw_step(opt_, flat, grad);
  std::size_t off = 0;
  for (auto& a : adapters_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), a.A.size(), a.A.data().begin());
    off += a.A.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), a.B.size(), a.B.data().begin());
    off += a.B.size();
  }
  ++step_;
}

MetricsRecord lora_step(LoraSession& session, const ModelLoss& loss, double lr) {
  Graph g(session.dtype());
  ParamNodes nodes;
  for (const auto& [name, value] : session.pretrained()) nodes[name] = g.parameter(value);
  std::map<std::string, LoraNodes> adapter_nodes;
  std::vector<NodeId> leaves;
  for (const auto& a : session.adapters()) {
    LoraNodes ln{g.leaf(a.A), g.leaf(a.B), a.scale};
    leaves.push_back(ln.A);
    leaves.push_back(ln.B);
    adapter_nodes.emplace(a.target, ln);
  }
  LinearFn lin = [&](Graph& gr, const std::string& layer, NodeId x) {
    const std::string w = layer + ".weight";
    auto it = adapter_nodes.find(w);
    if (it == adapter_nodes.end()) return linear(gr, x, nodes.at(w), nodes.at(layer + ".bias"));
    return lora_forward(gr, x, nodes.at(w), nodes.at(layer + ".bias"), it->second);
  };
  const NodeId task = loss(g, lin);

  MetricsRecord rec;
  rec.lr = lr;
  rec.task_loss = g.value(task).item();
  Gradients grads = g.backward(task);
  std::vector<double> flat;
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
  return rec;
}

MetricsRecord naive_selective_step(SaraSession& session, const TaskLoss& task_loss, double lr) {
  Graph g(session.config().dtype);
  ParamNodes nodes;
  std::map<std::string, NodeId> leaves;
  for (const auto& [name, value] : session.params()) {
    if (is_eligible(value)) {
      nodes[name] = g.leaf(value);
      leaves[name] = nodes[name];
    } else {
      nodes[name] = g.parameter(value);
    }
  }
  const NodeId task = task_loss(g, nodes);

  MetricsRecord rec;
  rec.lr = lr;
  rec.task_loss = g.value(task).item();
  const NodeId total = add_rank_term(g, session, nodes, task, rec.rank_loss);

  Gradients grads = g.backward(total);
  // ∇P_M = M ⊙ ∇P, read out at the trainable positions.
  std::vector<double> flat;
  flat.reserve(session.trainable().size());
  for (const auto& [name, mask] : session.mask()) {
    const Tensor gm = gather(grads.at(leaves.at(name)), *mask);
    flat.insert(flat.end(), gm.data().begin(), gm.data().end());
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

SaraSession make_full_session(const ParamStore& pretrained, SessionConfig config) {
  config.lambda_rank = 0.0;
  config.progressive = false;
  return SaraSession(pretrained, full_mask(pretrained), config);
}

MetricsRecord full_finetune_step(SaraSession& session, const TaskLoss& task_loss, double lr) {
  return naive_selective_step(session, task_loss, lr);
}

}  // namespace sara
