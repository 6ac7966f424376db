#pragma once

#include <span>
#include <string>
#include <vector>

#include "abf/tensor.hpp"

namespace abf {

// Labelled samples. inputs is a batch [N, sample...] with values in [0,1].
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 10;
  std::string split;       // "train" / "test"
  std::string descriptor;  // provenance of the draw (source, n, seed)

  std::size_t size() const { return labels.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
};

}  // namespace abf
