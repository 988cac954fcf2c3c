#pragma once

#include <optional>
#include <string>

namespace svmf::experiments {

/// Epoch summary; `split` is "train", "val" or "test".
struct MetricRecord {
  int epoch = 0;
  std::string split;
  double re = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
  std::optional<double> ll;
};

}  // namespace svmf::experiments
