// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "sara/autodiff.hpp"
#include "sara/param_store.hpp"

namespace sara {

/// Applies the linear layer named `layer` (parameters "<layer>.weight",
/// "<layer>.bias") to x.
using LinearFn = std::function<NodeId(Graph&, const std::string& layer, NodeId x)>;

/// y = x·Wᵀ + b with W (out×in) and b (out).
inline NodeId linear(Graph& g, NodeId x, NodeId weight, NodeId bias) {
  return g.add(g.matmul(x, weight, /*transpose_rhs=*/true), bias);
}

inline LinearFn dense_linear(const ParamNodes& nodes) {
  return [&nodes](Graph& g, const std::string& layer, NodeId x) {
    return linear(g, x, nodes.at(layer + ".weight"), nodes.at(layer + ".bias"));
  };
}

}  // namespace sara
