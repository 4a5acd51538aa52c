#pragma once

#include <map>
#include <string>
#include <vector>

#include "luvit/tensor.hpp"

namespace luvit {

enum class ParamGroup { encoder, projections, lora, llm_frozen, decoder, head };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::encoder, ParamGroup::projections, ParamGroup::lora,
                                            ParamGroup::llm_frozen, ParamGroup::decoder, ParamGroup::head};

std::string to_string(ParamGroup g);

enum class Init { zeros, ones, trunc_normal, normal };

/// Shape-level description of one model parameter; enough to count without allocating.
struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group = ParamGroup::encoder;
  bool trainable = true;
  int layer = 0;        // layer-wise lr decay index
  bool decay = false;   // receives weight decay
  Init init = Init::zeros;
  double stddev = 0.0;
};

template <typename S>
struct Param {
  ParamSpec spec;
  Tensor<S> tensor;
};

/// Insertion-ordered name -> parameter registry.
template <typename S>
class ParamStore {
 public:
  void add(ParamSpec spec, Tensor<S> tensor) {
    if (index_.count(spec.name)) throw ContractError("duplicate parameter name " + spec.name);
    index_[spec.name] = entries_.size();
    entries_.push_back(Param<S>{std::move(spec), std::move(tensor)});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<S>& get(const std::string& name) const { return entries_.at(lookup(name)).tensor; }
  Tensor<S>& get(const std::string& name) { return entries_.at(lookup(name)).tensor; }
  const Param<S>& entry(const std::string& name) const { return entries_.at(lookup(name)); }

  std::vector<Param<S>>& entries() { return entries_; }
  const std::vector<Param<S>>& entries() const { return entries_; }

  void clear_grads() {
    for (auto& p : entries_) p.tensor.clear_grad();
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }

  std::vector<Param<S>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct ParamReport {
  std::map<ParamGroup, Index> trainable;
  std::map<ParamGroup, Index> frozen;
  Index trainable_total = 0;
  Index frozen_total = 0;

  Index group_total(ParamGroup g) const;
  /// Trainable fraction held by the given group.
  double trainable_fraction(ParamGroup g) const;
};

/// Exact counts by group. With trainable_only, frozen parameters are left out of the report.
ParamReport count_params(const std::vector<ParamSpec>& specs, bool trainable_only = false);

template <typename S>
ParamReport count_params(const ParamStore<S>& store, bool trainable_only = false) {
  std::vector<ParamSpec> specs;
  for (const auto& p : store.entries()) {
    ParamSpec s = p.spec;
    s.trainable = p.tensor.requires_grad();
    specs.push_back(std::move(s));
  }
  return count_params(specs, trainable_only);
}

}  // namespace luvit
