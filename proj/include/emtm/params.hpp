#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "emtm/tensor.hpp"

namespace emtm {

// A named trainable array. Gradients accumulate additively across backward
// passes; the optimizer (or test) zeroes them between steps.
class ParameterStore;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape, starts at zero
  ParameterStore* owner = nullptr;

  void zero_grad() { grad.array().setZero(); }
};

// Owns every trainable parameter of an experiment, keyed by name.
//
// Initialization is a pure function of (store seed, parameter name), so the
// order in which models are constructed cannot change initial values, and two
// stores with the same seed agree parameter-by-parameter. Iteration follows
// insertion order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  std::uint64_t seed() const { return seed_; }

  // Returns the existing parameter of this name, or creates it via init.
  // Re-requesting with a different shape is a contract violation.
  Parameter& get_or_create(const std::string& name, const Shape& shape,
                           const std::function<Tensor(Rng&, const Shape&)>& init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t count() const { return entries_.size(); }
  Index total_scalars() const;

  // Insertion-ordered iteration.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<std::string> names() const;

  void zero_grads();
  double grad_norm() const;
  void scale_grads(double s);

  // Access instrumentation: when enabled, every lease of a parameter onto a
  // tape is recorded. Used to prove the inference path never touches
  // training-only parameters.
  void set_access_tracking(bool on) {
    track_access_ = on;
    access_log_.clear();
  }
  void note_access(const std::string& name) {
    if (track_access_) access_log_.push_back(name);
  }
  const std::vector<std::string>& access_log() const { return access_log_; }

 private:
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Parameter>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  bool track_access_ = false;
  std::vector<std::string> access_log_;
};

}  // namespace emtm
