#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace volcnn {

enum class GradcheckScope { kOps, kModel, kAll };
GradcheckScope parse_gradcheck_scope(std::string_view text);

inline constexpr double kGradcheckStep = 1e-3;
inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

struct GradcheckOptions {
  GradcheckScope scope = GradcheckScope::kAll;
  std::uint64_t seed = 0;
  int instances = 5;          // random instances per op
  int model_parameters = 20;  // parameters sampled in the end-to-end check
  /// Negative control: scales the analytic conv3d gradients by 1.01 before
  /// comparison, which the suite must report as a failure.
  bool corrupt_conv_backward = false;
};

struct GradcheckEntry {
  std::string op;
  int instances = 0;  // random instances for an op, sampled parameters or voxels for a model entry
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  int skipped = 0;  // model samples redrawn because a probe crossed a kink
};

/// Central differences in double precision against every backward pass.
/// Op entries report max over instances of ||a - n||_inf / max(||a||_inf, ||n||_inf);
/// model entries report the largest per-sample |a - n| / max(|a|, |n|, sqrt(eps) * max(1, |L|))
/// over samples where the network is differentiable across the +-h probe.
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options);

std::string format_gradcheck(const std::vector<GradcheckEntry>& entries);

}  // namespace volcnn
