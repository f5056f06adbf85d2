#include "emtm/params.hpp"

#include <cmath>

#include "emtm/errors.hpp"

namespace emtm {

Parameter& ParameterStore::get_or_create(const std::string& name, const Shape& shape,
                                         const std::function<Tensor(Rng&, const Shape&)>& init) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    Parameter& p = *entries_[it->second];
    if (p.value.shape() != shape)
      throw DimensionError("parameter '" + name + "' requested with shape " +
                           shape_to_string(shape) + " but exists with shape " +
                           shape_to_string(p.value.shape()));
    return p;
  }
  Rng rng(derive_seed(seed_, name));
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->owner = this;
  p->value = init(rng, shape);
  if (p->value.shape() != shape)
    throw DimensionError("initializer for '" + name + "' produced shape " +
                         shape_to_string(p->value.shape()) + ", expected " + shape_to_string(shape));
  p->grad = Tensor::zeros(shape);
  entries_.push_back(std::move(p));
  index_.emplace(name, entries_.size() - 1);
  return *entries_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return *entries_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return *entries_[it->second];
}

Index ParameterStore::total_scalars() const {
  Index n = 0;
  for (const auto& e : entries_) n += e->value.size();
  return n;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(entries_.size());
  for (auto& e : entries_) out.push_back(e.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.get());
  return out;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e->name);
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e->zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& e : entries_) sq += e->grad.array().square().sum();
  return std::sqrt(sq);
}

void ParameterStore::scale_grads(double s) {
  for (auto& e : entries_) e->grad.array() *= s;
}

}  // namespace emtm
