#include "luvit/params.hpp"

namespace luvit {

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::projections: return "projections";
    case ParamGroup::lora: return "lora";
    case ParamGroup::llm_frozen: return "llm_frozen";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::head: return "head";
  }
  return "?";
}

Index ParamReport::group_total(ParamGroup g) const {
  Index n = 0;
  if (auto it = trainable.find(g); it != trainable.end()) n += it->second;
  if (auto it = frozen.find(g); it != frozen.end()) n += it->second;
  return n;
}

double ParamReport::trainable_fraction(ParamGroup g) const {
  auto it = trainable.find(g);
  if (it == trainable.end() || trainable_total == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(trainable_total);
}

ParamReport count_params(const std::vector<ParamSpec>& specs, bool trainable_only) {
  ParamReport report;
  for (const auto& s : specs) {
    const Index n = numel(s.shape);
    if (s.trainable) {
      report.trainable[s.group] += n;
      report.trainable_total += n;
    } else if (!trainable_only) {
      report.frozen[s.group] += n;
      report.frozen_total += n;
    }
  }
  return report;
}

}  // namespace luvit
