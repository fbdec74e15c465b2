#pragma once

#include <string>
#include <vector>

#include "ftunet/tensor.hpp"

namespace ftunet {

// A decoded image/mask pair. Augmented samples carry their source in origin_id.
struct Sample {
  std::string id;
  std::string origin_id;
  ImageTensor image;
  ImageTensor mask;

  bool is_original() const { return id == origin_id; }
};

using SampleSet = std::vector<Sample>;

}  // namespace ftunet
