// SPDX-License-Identifier: Apache-2.0
#include "sara/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <optional>
#include <cmath>
#include <numeric>

namespace sara {
namespace {

// out[m×n] = a[m×k] · b[k×n]
Tensor mm_nn(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

// out[m×n] = a[m×k] · b[n×k]ᵀ
Tensor mm_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    std::size_t j = 0;
    // Four outputs at a time; each sum keeps its sequential order.
    for (; j + 4 <= n; j += 4) {
      const double* b0 = pb + j * k;
      const double *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double x = arow[p];
        s0 += x * b0[p];
        s1 += x * b1[p];
        s2 += x * b2[p];
        s3 += x * b3[p];
      }
      po[i * n + j] = s0;
      po[i * n + j + 1] = s1;
      po[i * n + j + 2] = s2;
      po[i * n + j + 3] = s3;
    }
    for (; j < n; ++j) {
      double s = 0.0;
      const double* brow = pb + j * k;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      po[i * n + j] = s;
    }
  }
  return out;
}

// out[m×n] = a[k×m]ᵀ · b[k×n]
Tensor mm_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected 2-D operand, got " + shape_string(t.shape()));
}

bool is_trailing_shape(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double silu(double x) { return x * sigmoid(x); }

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::silu: return "silu";
    case OpKind::mse: return "mse";
    case OpKind::concat: return "concat";
    case OpKind::scale: return "scale";
    case OpKind::unstructural_map: return "unstructural_map";
    case OpKind::custom: return "custom";
  }
  return "?";
}

std::size_t GradReport::param_grad_bytes() const {
  std::size_t s = 0;
  for (const auto& [id, b] : leaf_grad_bytes) s += b;
  return s;
}

std::size_t GradReport::tagged_bytes(const std::string& tag) const {
  auto it = saved_bytes_by_tag.find(tag);
  return it == saved_bytes_by_tag.end() ? 0 : it->second;
}

void Graph::finalize(Tensor& t) const {
  if (dtype_ == DType::f32)
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  if (!t.all_finite()) throw NumericError("non-finite value produced at op boundary");
}

NodeId Graph::push(Node node, Tensor value) {
  if (backward_done_) throw std::logic_error("graph already consumed by backward");
  finalize(value);
  node.value = std::make_shared<const Tensor>(std::move(value));
  node.tag = tag_;
  for (NodeId in : node.inputs) node.input_shapes.push_back(nodes_[in].value->shape());
  for (NodeId in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  nodes_.push_back(std::move(node));
  saved_refs_.push_back(0);
  return nodes_.size() - 1;
}

Graph::Node Graph::make_node(OpKind kind, Storage storage, std::vector<NodeId> inputs) {
  Node n;
  n.kind = kind;
  n.storage = storage;
  n.inputs = std::move(inputs);
  return n;
}

void Graph::save(Node& node, NodeId input) { node.saves.push_back(input); }

NodeId Graph::input(Tensor value) { return push(make_node(OpKind::input, Storage::input), std::move(value)); }

NodeId Graph::parameter(Tensor value) {
  return push(make_node(OpKind::parameter, Storage::parameter), std::move(value));
}

NodeId Graph::leaf(Tensor value) {
  Node n = make_node(OpKind::leaf, Storage::leaf);
  n.requires_grad = true;
  NodeId id = push(std::move(n), std::move(value));
  leaves_.push_back(id);
  return id;
}

const Tensor& Graph::value(NodeId id) const {
  const auto& n = nodes_.at(id);
  if (!n.value) throw std::logic_error("value of node " + std::to_string(id) + " was released by backward");
  return *n.value;
}

NodeId Graph::matmul(NodeId a, NodeId b, bool transpose_rhs) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require_2d(va, "matmul");
  require_2d(vb, "matmul");
  const std::size_t inner = transpose_rhs ? vb.cols() : vb.rows();
  if (va.cols() != inner) {
    throw ShapeError("matmul: shape mismatch " + shape_string(va.shape()) + " x " + shape_string(vb.shape()) +
                     (transpose_rhs ? "ᵀ" : ""));
  }
  Node n = make_node(OpKind::matmul, Storage::activation, {a, b});
  n.transpose_rhs = transpose_rhs;
  if (nodes_[a].requires_grad) save(n, b);
  if (nodes_[b].requires_grad) save(n, a);
  Tensor out = transpose_rhs ? mm_nt(va, vb) : mm_nn(va, vb);
  return push(std::move(n), std::move(out));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.shape() != vb.shape() && !is_trailing_shape(va.shape(), vb.shape())) {
    throw ShapeError("add: cannot broadcast " + shape_string(vb.shape()) + " onto " + shape_string(va.shape()));
  }
  Tensor out = va;
  const std::size_t inner = vb.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i % inner];
  return push(make_node(OpKind::add, Storage::activation, {a, b}), std::move(out));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.shape() != vb.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  }
  Node n = make_node(OpKind::mul, Storage::activation, {a, b});
  if (nodes_[a].requires_grad) save(n, b);
  if (nodes_[b].requires_grad) save(n, a);
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(std::move(n), std::move(out));
}

NodeId Graph::silu(NodeId a) {
  Node n = make_node(OpKind::silu, Storage::activation, {a});
  if (nodes_[a].requires_grad) save(n, a);
  Tensor out = val(a);
  for (double& v : out.data()) v = sara::silu(v);
  return push(std::move(n), std::move(out));
}

NodeId Graph::mse(NodeId a, NodeId b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.shape() != vb.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  }
  if (va.empty()) throw ShapeError("mse: empty operands");
  Node n = make_node(OpKind::mse, Storage::activation, {a, b});
  if (nodes_[a].requires_grad || nodes_[b].requires_grad) {
    save(n, a);
    save(n, b);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    s += d * d;
  }
  return push(std::move(n), Tensor::scalar(s / static_cast<double>(va.size())));
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  require_2d(va, "concat");
  require_2d(vb, "concat");
  if (va.rows() != vb.rows()) {
    throw ShapeError("concat: row mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  }
  const std::size_t r = va.rows(), ca = va.cols(), cb = vb.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = va(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = vb(i, j);
  }
  return push(make_node(OpKind::concat, Storage::activation, {a, b}), std::move(out));
}

NodeId Graph::scale(NodeId a, double factor) {
  Node n = make_node(OpKind::scale, Storage::activation, {a});
  n.factor = factor;
  Tensor out = val(a);
  for (double& v : out.data()) v *= factor;
  return push(std::move(n), std::move(out));
}

NodeId Graph::unstructural_map(Tensor frozen, NodeId learn, std::shared_ptr<const MatrixMask> mask) {
  if (!mask) throw std::invalid_argument("unstructural_map: null mask");
  const Tensor& vl = val(learn);
  if (vl.size() != mask->popcount()) {
    throw ShapeError("unstructural_map: " + std::to_string(vl.size()) + " trainable values for mask with popcount " +
                     std::to_string(mask->popcount()));
  }
  Tensor out = scatter(frozen, vl.data(), *mask);
  Node n = make_node(OpKind::unstructural_map, Storage::derived, {learn});
  n.mask = std::move(mask);
  return push(std::move(n), std::move(out));
}

NodeId Graph::custom(std::string name, std::vector<NodeId> inputs, Tensor value, CustomBackward backward,
                     std::size_t saved_bytes) {
  (void)name;
  Node n = make_node(OpKind::custom, Storage::activation, std::move(inputs));
  n.custom_backward = std::move(backward);
  n.custom_saved_bytes = saved_bytes;
  return push(std::move(n), std::move(value));
}

Gradients Graph::backward(NodeId loss) {
  if (backward_done_) throw std::logic_error("backward called twice on the same graph");
  if (loss >= nodes_.size()) throw std::out_of_range("backward: unknown loss node");
  if (val(loss).size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(val(loss).shape()));
  backward_done_ = true;

  const std::size_t es = elem_size(dtype_);
  Gradients result;
  GradReport& rep = result.report;
  rep.dtype = dtype_;

  // Saved activations that backward will actually read.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    for (NodeId s : n.saves) ++saved_refs_[s];
    if (n.custom_saved_bytes) {
      rep.saved_activation_bytes += n.custom_saved_bytes;
      rep.saved_bytes_by_tag[n.tag] += n.custom_saved_bytes;
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (saved_refs_[i] == 0 || nodes_[i].storage != Storage::activation) continue;
    const std::size_t b = nodes_[i].value->size() * es;
    rep.saved_activation_bytes += b;
    rep.saved_bytes_by_tag[nodes_[i].tag] += b;
  }

  std::size_t live = rep.saved_activation_bytes;
  rep.peak_retained_bytes = live;
  std::vector<std::optional<Tensor>> grads(nodes_.size());

  auto deposit = [&](NodeId target, Tensor g) {
    if (!nodes_[target].requires_grad) return;
    finalize(g);
    auto& slot = grads[target];
    if (!slot) {
      const std::size_t b = g.size() * es;
      live += b;
      if (nodes_[target].storage == Storage::leaf) {
        rep.leaf_grad_bytes[target] = b;
      } else {
        rep.transient_grad_bytes += b;
      }
      rep.peak_retained_bytes = std::max(rep.peak_retained_bytes, live);
      slot = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
      finalize(*slot);
    }
  };

  deposit(loss, Tensor(val(loss).shape(), {1.0}));

  for (std::size_t k = loss + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!grads[k] || n.storage == Storage::leaf) continue;
    const Tensor g = std::move(*grads[k]);
    grads[k].reset();

    switch (n.kind) {
      case OpKind::input:
      case OpKind::parameter:
      case OpKind::leaf:
        break;
      case OpKind::matmul: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) deposit(a, n.transpose_rhs ? mm_nn(g, val(b)) : mm_nt(g, val(b)));
        if (nodes_[b].requires_grad) deposit(b, n.transpose_rhs ? mm_tn(g, val(a)) : mm_tn(val(a), g));
        break;
      }
      case OpKind::add: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) deposit(a, g);
        if (nodes_[b].requires_grad) {
          Tensor gb(n.input_shapes[1]);
          const std::size_t inner = gb.size();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
          deposit(b, std::move(gb));
        }
        break;
      }
      case OpKind::mul: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) {
          Tensor ga = g;
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= val(b)[i];
          deposit(a, std::move(ga));
        }
        if (nodes_[b].requires_grad) {
          Tensor gb = g;
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= val(a)[i];
          deposit(b, std::move(gb));
        }
        break;
      }
      case OpKind::silu: {
        const Tensor& x = val(n.inputs[0]);
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double s = sigmoid(x[i]);
          gx[i] *= s * (1.0 + x[i] * (1.0 - s));
        }
        deposit(n.inputs[0], std::move(gx));
        break;
      }
      case OpKind::mse: {
        const Tensor& a = val(n.inputs[0]);
        const Tensor& b = val(n.inputs[1]);
        const double c = 2.0 * g.item() / static_cast<double>(a.size());
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor ga(a.shape());
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] = c * (a[i] - b[i]);
          deposit(n.inputs[0], std::move(ga));
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor gb(b.shape());
          for (std::size_t i = 0; i < b.size(); ++i) gb[i] = c * (b[i] - a[i]);
          deposit(n.inputs[1], std::move(gb));
        }
        break;
      }
      case OpKind::concat: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        const std::size_t r = g.rows();
        const std::size_t ca = n.input_shapes[0][1], cb = n.input_shapes[1][1];
        if (nodes_[a].requires_grad) {
          Tensor ga({r, ca});
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
          deposit(a, std::move(ga));
        }
        if (nodes_[b].requires_grad) {
          Tensor gb({r, cb});
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
          deposit(b, std::move(gb));
        }
        break;
      }
      case OpKind::scale: {
        Tensor ga = g;
        for (double& v : ga.data()) v *= n.factor;
        deposit(n.inputs[0], std::move(ga));
        break;
      }
      case OpKind::unstructural_map: {
        // UB: the full-matrix gradient is read at the mask and then dropped.
        deposit(n.inputs[0], gather(g, *n.mask));
        break;
      }
      case OpKind::custom: {
        std::vector<Tensor> gs = n.custom_backward(g);
        if (gs.size() != n.inputs.size()) throw std::logic_error("custom backward returned wrong gradient count");
        for (std::size_t i = 0; i < gs.size(); ++i)
          if (gs[i].shape() == n.input_shapes[i]) deposit(n.inputs[i], std::move(gs[i]));
        if (n.custom_saved_bytes) live -= n.custom_saved_bytes;
        n.custom_backward = nullptr;
        break;
      }
    }

    live -= g.size() * es;
    for (NodeId s : n.saves) {
      assert(saved_refs_[s] > 0);
      if (--saved_refs_[s] == 0 && nodes_[s].storage == Storage::activation) {
        live -= nodes_[s].value->size() * es;
        nodes_[s].value.reset();
      }
    }
  }

  // Leaves off the loss path still get (zero) storage so every declared leaf
  // has a gradient of its own shape.
  for (NodeId id : leaves_) {
    if (!grads[id]) {
      Tensor z(nodes_[id].value->shape());  // leaves are never released
      rep.leaf_grad_bytes[id] = z.size() * es;
      live += z.size() * es;
      rep.peak_retained_bytes = std::max(rep.peak_retained_bytes, live);
      grads[id] = std::move(z);
    }
    result.by_leaf.emplace(id, std::move(*grads[id]));
  }
  return result;
}

}  // namespace sara
