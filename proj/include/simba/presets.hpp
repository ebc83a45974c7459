#pragma once

#include <string>

#include "simba/analysis.hpp"
#include "simba/nets.hpp"

namespace simba {

/// Probe specification for the simplicity protocol. With a simba reference of
/// `blocks` residual blocks, mlp and mlp+ln use 2*blocks hidden layers and
/// mlp+res uses 2*blocks two-linear skip pairs after its input projection;
/// widths are then adjusted for parameter matching.
inline NetworkSpec analysis_spec(const std::string& arch, int hidden_dim, int blocks) {
  const Variant v = variant_from(arch);
  NetworkSpec s{v, 2, hidden_dim, blocks, 1, Head::raw};
  if (v == Variant::mlp || v == Variant::mlp_ln || v == Variant::mlp_res) s.num_blocks = 2 * blocks;
  return s;
}

/// Probe spec for `arch`, width-adjusted until its parameter count lands
/// within 1% of the reference architecture's count.
inline NetworkSpec matched_analysis_spec(const std::string& arch, const NetworkSpec& reference,
                                         int blocks) {
  NetworkSpec cand = analysis_spec(arch, 16, blocks);
  if (cand.variant == reference.variant) return reference;
  return match_param_count(cand, count_params(reference));
}

}  // namespace simba
