#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hst/autodiff.hpp"
#include "hst/model.hpp"

namespace hst {

struct GradCase {
  std::string name;
  ad::GraphBuilder build;
  ad::ParamSet params;
};

// Toy configuration for the end-to-end check: T=4, d=4, d_out=8, n=4, raw patches.
ModelConfig toy_model_config();
// A short synthetic yawning clip prepared for `cfg` (raw patches).
ClipInput toy_clip(const ModelConfig& cfg, std::uint64_t seed);

// One case per differentiable operation plus module composites and the full
// pipeline (model loss on the toy clip, every parameter and the centers).
std::vector<GradCase> gradcheck_cases(std::uint64_t seed);

struct GradCaseResult {
  std::string name;
  ad::GradCheckReport report;
};

std::vector<GradCaseResult> run_gradcheck(std::uint64_t seed, double step, double tol);

}  // namespace hst
