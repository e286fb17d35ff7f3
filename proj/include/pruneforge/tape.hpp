#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pruneforge/ops.hpp"
#include "pruneforge/tensor.hpp"

namespace pruneforge {

/// Handle to a value recorded on a GradientTape.
struct VarId {
  std::size_t index = 0;
};

/// Reverse-mode accumulation over an explicit record of executed operations.
///
/// Values are recorded in execution order; backward() visits the records in
/// exactly the reverse order and adds each operation's contribution into the
/// gradients of its inputs. Nodes that do not depend on any parameter are
/// skipped.
template <typename T>
class GradientTape {
 public:
  /// Input that never receives a gradient.
  VarId constant(BasicTensor<T> value);
  /// Trainable leaf.
  VarId parameter(BasicTensor<T> value);

  VarId conv2d(VarId input, VarId kernels, VarId bias);
  VarId relu(VarId input);
  VarId maxpool2d(VarId input);
  /// [b, ...] -> [b, n] keeping row-major (channel, row, column) order.
  VarId flatten(VarId input);
  VarId dense(VarId input, VarId weights, VarId bias);
  /// Scalar node holding the mean cross-entropy.
  VarId softmax_cross_entropy(VarId logits, std::vector<int> labels);
  /// Scalar node holding the batch-mean Euclidean distance to `target`.
  VarId mean_l2_distance(VarId output, BasicTensor<T> target);

  const BasicTensor<T>& value(VarId id) const { return nodes_.at(id.index).value; }
  /// Gradient accumulated by the last backward(); empty if the node was not reached.
  const BasicTensor<T>& grad(VarId id) const { return nodes_.at(id.index).grad; }
  double scalar(VarId id) const;
  const std::string& op_name(VarId id) const { return nodes_.at(id.index).op; }
  bool requires_grad(VarId id) const { return nodes_.at(id.index).requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients. `loss` must be scalar.
  void backward(VarId loss);

  /// Node indices visited by the last backward(), in visiting order.
  const std::vector<std::size_t>& last_backward_visits() const { return visits_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    std::string op;
    std::function<void(GradientTape&, const BasicTensor<T>& upstream)> backward;
  };

  VarId push(Node node);
  void accumulate(VarId id, const BasicTensor<T>& contribution);
  bool needs(VarId id) const { return nodes_[id.index].requires_grad; }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visits_;
};

extern template class GradientTape<float>;
extern template class GradientTape<double>;

}  // namespace pruneforge
