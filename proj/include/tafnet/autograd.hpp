#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tafnet/tensor.hpp"

namespace tafnet {

// A value in a differentiable computation. `grad` is non-null when the
// value participates in gradient tracking; it always has the same shape
// as `value` and starts at zero. Values are never mutated after an op
// creates them, so Vars are safe to share.
struct Var {
  std::shared_ptr<Tensor4> value;
  std::shared_ptr<Tensor4> grad;

  bool tracked() const { return grad != nullptr; }
  const Shape4& shape() const { return value->shape; }
};

Var make_var(Tensor4 v, bool with_grad);
Var make_const(Tensor4 v);

// Ordered record of executed operations. Each forward op that sees a
// non-null tape pushes one backward closure; backward() replays them in
// reverse, accumulating into grad buffers. Parameters that did not
// influence the loss keep their zero-initialized gradient.
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and replays the chain rule. `loss` must be
  // a tracked scalar (1x1x1x1).
  void backward(const Var& loss);

  void clear() { ops_.clear(); }
  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// A named learnable tensor. Gradient shape always equals value shape.
struct Parameter {
  std::string name;
  Var var;

  Tensor4& value() { return *var.value; }
  const Tensor4& value() const { return *var.value; }
  Tensor4& grad() { return *var.grad; }
  const Tensor4& grad() const { return *var.grad; }
};

// Collection of uniquely named parameters with a stable creation order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Tensor4 init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  const Parameter* find(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t size() const { return params_.size(); }

  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

}  // namespace tafnet
