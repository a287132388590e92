#pragma once

#include <cstddef>
#include <vector>

namespace cascadesplit {

/// One labeled example: a feature vector and its class index.
struct Sample {
  std::vector<double> x;
  std::size_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Dataset = std::vector<Sample>;

}  // namespace cascadesplit
