#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace ganmut {

struct Batch {
  torch::Tensor images;  // (B, 3, S, S) in [-1, 1]
  torch::Tensor labels;  // (B,) int64 canonical label ids
};

/// Source of training batches. Implementations must deliver batches in a
/// deterministic order under a fixed seed.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch next() = 0;
  /// Number of records in one epoch.
  virtual std::int64_t size() const = 0;
  /// Distinct label ids present in the underlying dataset.
  virtual std::vector<int> labels_present() const = 0;
};

}  // namespace ganmut
