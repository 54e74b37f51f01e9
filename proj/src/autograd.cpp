#include "tafnet/autograd.hpp"

#include <stdexcept>

namespace tafnet {

Var make_var(Tensor4 v, bool with_grad) {
  Var out;
  out.value = std::make_shared<Tensor4>(std::move(v));
  if (with_grad) {
    out.grad = std::make_shared<Tensor4>(out.value->shape, 0.0);
  }
  return out;
}

Var make_const(Tensor4 v) { return make_var(std::move(v), false); }

void Tape::backward(const Var& loss) {
  if (!loss.tracked()) {
    throw std::invalid_argument("Tape::backward: loss is not tracked");
  }
  if (loss.shape().numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be scalar, got " +
                                loss.shape().str());
  }
  loss.grad->data[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    (*it)();
  }
}

Parameter& ParamStore::create(const std::string& name, Tensor4 init) {
  if (by_name_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->var = make_var(std::move(init), /*with_grad=*/true);
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  by_name_[name] = raw;
  return *raw;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::invalid_argument("ParamStore: no parameter named '" + name + "'");
  }
  return *it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw std::invalid_argument("ParamStore: no parameter named '" + name + "'");
  }
  return *it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) {
    auto& g = p->var.grad->data;
    std::fill(g.begin(), g.end(), 0.0);
  }
}

}  // namespace tafnet
