#include "pruneforge/tape.hpp"

#include <memory>
#include <utility>

namespace pruneforge {

template <typename T>
VarId GradientTape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return VarId{nodes_.size() - 1};
}

template <typename T>
void GradientTape<T>::accumulate(VarId id, const BasicTensor<T>& contribution) {
  Node& node = nodes_[id.index];
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = contribution;
    return;
  }
  for (std::size_t i = 0; i < contribution.size(); ++i) node.grad[i] += contribution[i];
}

template <typename T>
VarId GradientTape<T>::constant(BasicTensor<T> value) {
  return push(Node{std::move(value), {}, false, "constant", nullptr});
}

template <typename T>
VarId GradientTape<T>::parameter(BasicTensor<T> value) {
  return push(Node{std::move(value), {}, true, "parameter", nullptr});
}

template <typename T>
VarId GradientTape<T>::conv2d(VarId input, VarId kernels, VarId bias) {
  auto out = ops::conv2d(value(input), value(kernels), value(bias));
  const bool rg = needs(input) || needs(kernels) || needs(bias);
  auto back = [input, kernels, bias](GradientTape& tape, const BasicTensor<T>& upstream) {
    auto g = ops::conv2d_backward(tape.value(input), tape.value(kernels), upstream, tape.needs(input));
    if (tape.needs(input)) tape.accumulate(input, g.input);
    tape.accumulate(kernels, g.kernels);
    tape.accumulate(bias, g.bias);
  };
  return push(Node{std::move(out), {}, rg, "conv2d", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::relu(VarId input) {
  auto out = ops::relu(value(input));
  auto back = [input](GradientTape& tape, const BasicTensor<T>& upstream) {
    tape.accumulate(input, ops::relu_backward(tape.value(input), upstream));
  };
  return push(Node{std::move(out), {}, needs(input), "relu", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::maxpool2d(VarId input) {
  auto pooled = ops::maxpool2d(value(input));
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(pooled.argmax));
  auto back = [input, argmax](GradientTape& tape, const BasicTensor<T>& upstream) {
    tape.accumulate(input, ops::maxpool2d_backward(tape.value(input).shape(), *argmax, upstream));
  };
  return push(Node{std::move(pooled.output), {}, needs(input), "maxpool2d", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::flatten(VarId input) {
  const auto& v = value(input);
  if (v.rank() < 1) throw Error("flatten: rank-0 input");
  auto out = v.reshaped({v.dim(0), v.size() / v.dim(0)});
  auto back = [input](GradientTape& tape, const BasicTensor<T>& upstream) {
    tape.accumulate(input, upstream.reshaped(tape.value(input).shape()));
  };
  return push(Node{std::move(out), {}, needs(input), "flatten", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::dense(VarId input, VarId weights, VarId bias) {
  auto out = ops::dense(value(input), value(weights), value(bias));
  const bool rg = needs(input) || needs(weights) || needs(bias);
  auto back = [input, weights, bias](GradientTape& tape, const BasicTensor<T>& upstream) {
    auto g = ops::dense_backward(tape.value(input), tape.value(weights), upstream, tape.needs(input));
    if (tape.needs(input)) tape.accumulate(input, g.input);
    tape.accumulate(weights, g.weights);
    tape.accumulate(bias, g.bias);
  };
  return push(Node{std::move(out), {}, rg, "dense", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::softmax_cross_entropy(VarId logits, std::vector<int> labels) {
  auto result = ops::softmax_cross_entropy(value(logits), labels);
  auto local = std::make_shared<BasicTensor<T>>(std::move(result.grad));
  auto back = [logits, local](GradientTape& tape, const BasicTensor<T>& upstream) {
    BasicTensor<T> g = *local;
    for (auto& v : g.values()) v *= upstream[0];
    tape.accumulate(logits, g);
  };
  return push(Node{BasicTensor<T>({1}, static_cast<T>(result.loss)), {}, needs(logits),
                   "softmax_cross_entropy", std::move(back)});
}

template <typename T>
VarId GradientTape<T>::mean_l2_distance(VarId output, BasicTensor<T> target) {
  auto result = ops::mean_l2_distance(value(output), target);
  auto local = std::make_shared<BasicTensor<T>>(std::move(result.grad));
  auto back = [output, local](GradientTape& tape, const BasicTensor<T>& upstream) {
    BasicTensor<T> g = *local;
    for (auto& v : g.values()) v *= upstream[0];
    tape.accumulate(output, g);
  };
  return push(Node{BasicTensor<T>({1}, static_cast<T>(result.loss)), {}, needs(output),
                   "mean_l2_distance", std::move(back)});
}

template <typename T>
double GradientTape<T>::scalar(VarId id) const {
  const auto& v = value(id);
  if (v.size() != 1) throw Error("tape value is not a scalar: " + shape_to_string(v.shape()));
  return static_cast<double>(v[0]);
}

template <typename T>
void GradientTape<T>::backward(VarId loss) {
  if (value(loss).size() != 1) throw Error("backward requires a scalar loss");
  for (auto& node : nodes_) node.grad = BasicTensor<T>();
  visits_.clear();
  if (!nodes_[loss.index].requires_grad) return;
  nodes_[loss.index].grad = BasicTensor<T>({1}, T{1});
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty() || !node.requires_grad) continue;
    visits_.push_back(i);
    // The closure may append to other nodes' grads but never to this one.
    const BasicTensor<T> upstream = node.grad;
    node.backward(*this, upstream);
  }
}

template class GradientTape<float>;
template class GradientTape<double>;

}  // namespace pruneforge
