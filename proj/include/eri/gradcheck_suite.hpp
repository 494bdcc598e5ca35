#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eri/run_config.hpp"

namespace eri {

struct GradCheckRow {
  std::string name;
  double max_relative_error = 0.0;
  double threshold = 0.0;
  std::string worst;
  Index checked = 0;

  bool passed() const { return max_relative_error < threshold; }
};

inline constexpr double kOpsThreshold = 1e-4;
inline constexpr double kModelThreshold = 1e-3;
inline constexpr double kGradCheckEps = 1e-5;

/// Every primitive plus linear, batch norm, conv, LSTM (3 steps), one
/// attention head and both correlation losses, all in double precision.
std::vector<GradCheckRow> gradcheck_ops(std::uint64_t seed);

/// Probe coordinates of every trainable tensor of a double-precision copy of
/// the configured model. Frozen extractor tensors are not listed.
std::vector<GradCheckRow> gradcheck_model(const RunConfig& config, Index probes_per_tensor = 3);

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace eri
