#pragma once

#include <filesystem>
#include <string>

#include "eri/random.hpp"
#include "eri/tensor.hpp"

namespace eri::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("eri_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace eri::test
