// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors.
//
// Every node records how its value is stored:
//   input      data fed into the graph (batches, embeddings, targets)
//   parameter  frozen model weights, no gradient is ever produced for them
//   leaf       trainable values, the only nodes whose gradients are retained
//   derived    model weights assembled from leaves (unstructural mapping)
//   activation intermediate op outputs
//
// Backward frees non-leaf gradients as soon as the producing node has
// propagated them, and releases saved activations once their last consumer
// has run. GradReport records what that cost.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sara/mask.hpp"
#include "sara/tensor.hpp"

namespace sara {

using NodeId = std::size_t;

enum class OpKind {
  input,
  parameter,
  leaf,
  matmul,
  add,
  mul,
  silu,
  mse,
  concat,
  scale,
  unstructural_map,
  custom,
};

std::string to_string(OpKind kind);

enum class Storage { input, parameter, leaf, derived, activation };

struct GradReport {
  DType dtype = DType::f64;
  std::map<NodeId, std::size_t> leaf_grad_bytes;
  // Non-leaf gradient buffers allocated during backward; all are freed
  // before backward returns.
  std::size_t transient_grad_bytes = 0;
  // Activations held for backward when backward started.
  std::size_t saved_activation_bytes = 0;
  // Saved activations grouped by the tag of the node that produced them.
  std::map<std::string, std::size_t> saved_bytes_by_tag;
  // Largest simultaneous footprint of gradients plus saved activations.
  std::size_t peak_retained_bytes = 0;

  std::size_t param_grad_bytes() const;
  std::size_t total_bytes() const {
    return param_grad_bytes() + transient_grad_bytes + saved_activation_bytes;
  }
  std::size_t tagged_bytes(const std::string& tag) const;

  friend bool operator==(const GradReport&, const GradReport&) = default;
};

struct Gradients {
  std::map<NodeId, Tensor> by_leaf;
  GradReport report;

  const Tensor& at(NodeId leaf) const { return by_leaf.at(leaf); }
};

/// Gradient rule for a custom node: receives dL/d(output) and returns one
/// gradient per input. A returned tensor whose shape differs from its input
/// (e.g. a default-constructed one) means "no gradient".
using CustomBackward = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

class Graph {
 public:
  explicit Graph(DType dtype = DType::f64) : dtype_(dtype) {}

  DType dtype() const { return dtype_; }

  NodeId input(Tensor value);
  NodeId parameter(Tensor value);
  NodeId leaf(Tensor value);

  /// a·b, or a·bᵀ when `transpose_rhs` is set. Both operands are 2-D.
  NodeId matmul(NodeId a, NodeId b, bool transpose_rhs = false);
  /// Same-shape addition, or b broadcast over the leading dimensions of a.
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId silu(NodeId a);
  /// Mean of squared differences, a scalar.
  NodeId mse(NodeId a, NodeId b);
  /// Concatenation of two 2-D tensors along the last axis.
  NodeId concat(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);

  /// Weight matrix equal to `frozen` outside the mask and to the values of
  /// `learn` on it. Gradient flows only to `learn`: dL/dlearn = dL/dP[mask].
  NodeId unstructural_map(Tensor frozen, NodeId learn, std::shared_ptr<const MatrixMask> mask);

  NodeId custom(std::string name, std::vector<NodeId> inputs, Tensor value, CustomBackward backward,
                std::size_t saved_bytes = 0);

  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

  /// Nodes created while a tag is set are attributed to it in GradReport.
  void set_tag(std::string tag) { tag_ = std::move(tag); }
  const std::string& tag() const { return tag_; }

  /// Reverse pass from a scalar loss. Consumes saved activations, so it may
  /// be called once per graph.
  Gradients backward(NodeId loss);

 private:
  struct Node {
    OpKind kind = OpKind::input;
    Storage storage = Storage::input;
    std::vector<NodeId> inputs;
    std::vector<Shape> input_shapes;
    std::shared_ptr<const Tensor> value;
    bool requires_grad = false;
    bool transpose_rhs = false;
    double factor = 1.0;
    std::shared_ptr<const MatrixMask> mask;
    CustomBackward custom_backward;
    std::size_t custom_saved_bytes = 0;
    // Inputs whose values this node's backward reads.
    std::vector<NodeId> saves;
    std::string tag;
  };

  static Node make_node(OpKind kind, Storage storage, std::vector<NodeId> inputs = {});
  NodeId push(Node node, Tensor value);
  void save(Node& node, NodeId input);
  const Tensor& val(NodeId id) const { return *nodes_[id].value; }
  void finalize(Tensor& t) const;

  DType dtype_;
  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
  std::vector<std::size_t> saved_refs_;
  std::string tag_;
  bool backward_done_ = false;
};

/// RAII guard for Graph::set_tag.
class TagScope {
 public:
  TagScope(Graph& g, std::string tag) : g_(g), prev_(g.tag()) { g_.set_tag(std::move(tag)); }
  ~TagScope() { g_.set_tag(prev_); }
  TagScope(const TagScope&) = delete;
  TagScope& operator=(const TagScope&) = delete;

 private:
  Graph& g_;
  std::string prev_;
};

double silu(double x);

}  // namespace sara
